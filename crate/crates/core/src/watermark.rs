//! Dynamic-watermarking detection of false data injection: watermark
//! generation, watermarked prediction, innovation windows and the ξ₁/ξ₂
//! tests.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, symmetrize, Mat, Vector};
use crate::sysid::{mat_from_rows, rows_of, DiscreteModel};

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_SIGMA: f64 = 0.02;
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 2.0;
pub const DEFAULT_CALIBRATION_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkConfig {
    pub sigma: Mat,
    pub seed: u64,
}

impl WatermarkConfig {
    pub fn isotropic(n: usize, std: f64, seed: u64) -> Self {
        Self {
            sigma: Mat::identity(n, n) * (std * std),
            seed,
        }
    }
}

/// Where the watermark enters the prediction recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkPlacement {
    /// `x̂[k] = A′x̂[k−1] + B′(u[k−1] + e[k−1])`
    #[default]
    Input,
    /// `x̂[k] = A′x̂[k−1] + B′u[k−1] + e[k−1]` (requires order == inputs)
    State,
}

/// Seeded Gaussian watermark source.
#[derive(Debug, Clone)]
pub struct Watermark {
    factor: Mat,
    rng: ChaCha8Rng,
}

impl Watermark {
    pub fn new(cfg: &WatermarkConfig) -> Result<Self> {
        let s = &cfg.sigma;
        if !s.is_square() {
            return Err(Error::dim("watermark covariance", s.nrows(), s.ncols()));
        }
        let asym = (s - s.transpose()).amax();
        if asym > 1e-12 * s.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(
                "watermark covariance is not symmetric".into(),
            ));
        }
        if min_symmetric_eigenvalue(s) < -1e-12 * s.amax() {
            return Err(Error::InvalidParameter(
                "watermark covariance is not positive semidefinite".into(),
            ));
        }
        let factor = match s.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let eig = symmetrize(s).symmetric_eigen();
                let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
                &eig.eigenvectors * Mat::from_diagonal(&root)
            }
        };
        Ok(Self {
            factor,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn draw(&mut self) -> Vector {
        let n = self.dim();
        let w = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
        &self.factor * w
    }
}

/// One draw from a freshly seeded source.
pub fn draw_watermark(cfg: &WatermarkConfig) -> Result<Vector> {
    Ok(Watermark::new(cfg)?.draw())
}

/// Advances the prediction state by one sample and returns the new state
/// together with the predicted power `C′x̂`.
pub fn predict_step(
    model: &DiscreteModel,
    x_hat: &Vector,
    d_omega_s: &Vector,
    e: &Vector,
) -> Result<(Vector, Vector)> {
    predict_step_with(model, x_hat, d_omega_s, e, WatermarkPlacement::Input)
}

pub fn predict_step_with(
    model: &DiscreteModel,
    x_hat: &Vector,
    d_omega_s: &Vector,
    e: &Vector,
    placement: WatermarkPlacement,
) -> Result<(Vector, Vector)> {
    let m = model.n_inputs();
    if x_hat.len() != model.order {
        return Err(Error::dim("predict_step x_hat", model.order, x_hat.len()));
    }
    if d_omega_s.len() != m {
        return Err(Error::dim("predict_step d_omega_s", m, d_omega_s.len()));
    }
    let x = match placement {
        WatermarkPlacement::Input => {
            if e.len() != m {
                return Err(Error::dim("predict_step e", m, e.len()));
            }
            &model.a_d * x_hat + &model.b_d * (d_omega_s + e)
        }
        WatermarkPlacement::State => {
            if e.len() != model.order {
                return Err(Error::dim("predict_step e (state placement)", model.order, e.len()));
            }
            &model.a_d * x_hat + &model.b_d * d_omega_s + e
        }
    };
    let p = &model.c_d * &x;
    Ok((x, p))
}

/// Sample mean and (1/W-normalized) covariance of a set of vectors.
pub fn window_stats<'a, I>(samples: I, dim: usize) -> (Vector, Mat)
where
    I: IntoIterator<Item = &'a Vector> + Clone,
{
    let mut mu = Vector::zeros(dim);
    let mut n = 0usize;
    for v in samples.clone() {
        mu += v;
        n += 1;
    }
    if n == 0 {
        return (mu, Mat::zeros(dim, dim));
    }
    mu /= n as f64;
    let mut cov = Mat::zeros(dim, dim);
    for v in samples {
        let d = v - &mu;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    (mu, cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStats {
    pub mu_star: Vector,
    pub sigma_star: Mat,
    pub w: usize,
}

/// Baseline over the first `w` innovations of a nominal, attack-free run.
pub fn calibrate_baseline(innovations: &[Vector], w: usize) -> Result<BaselineStats> {
    if w == 0 {
        return Err(Error::InvalidParameter("window length must be positive".into()));
    }
    if innovations.len() < w {
        return Err(Error::InvalidParameter(format!(
            "calibration needs at least {w} innovations, got {}",
            innovations.len()
        )));
    }
    let dim = innovations[0].len();
    let (mu, sigma) = window_stats(&innovations[..w], dim);
    Ok(BaselineStats {
        mu_star: mu,
        sigma_star: sigma,
        w,
    })
}

/// `(ξ₁, ξ₂)` of a window against the baseline.
pub fn test_statistics(mu: &Vector, sigma: &Mat, baseline: &BaselineStats) -> (f64, f64) {
    let xi1 = (mu - &baseline.mu_star).norm();
    let xi2 = (sigma - &baseline.sigma_star).trace().abs();
    (xi1, xi2)
}

/// Largest `(ξ₁, ξ₂)` over every full window of an innovation sequence.
pub fn peak_statistics(innovations: &[Vector], baseline: &BaselineStats) -> (f64, f64) {
    let w = baseline.w;
    let mut peak = (0.0f64, 0.0f64);
    if innovations.len() < w {
        return peak;
    }
    let dim = innovations[0].len();
    for end in w..=innovations.len() {
        let (mu, sigma) = window_stats(&innovations[end - w..end], dim);
        let (x1, x2) = test_statistics(&mu, &sigma, baseline);
        peak = (peak.0.max(x1), peak.1.max(x2));
    }
    peak
}

/// Baseline plus the two decision thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub baseline: BaselineStats,
    pub eps1: f64,
    pub eps2: f64,
    /// Nominal peaks the thresholds were scaled from.
    pub peak_xi1: f64,
    pub peak_xi2: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    w: usize,
    eps1: f64,
    eps2: f64,
    peak_xi1: f64,
    peak_xi2: f64,
    mu_star: Vec<f64>,
    sigma_star: Vec<Vec<f64>>,
}

impl Calibration {
    /// Thresholds `ε_j = factor · max ξ_j` over the nominal innovations.
    pub fn from_nominal(innovations: &[Vector], w: usize, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold factor must be positive, got {factor}"
            )));
        }
        let baseline = calibrate_baseline(innovations, w)?;
        let (p1, p2) = peak_statistics(innovations, &baseline);
        Ok(Self {
            baseline,
            eps1: factor * p1,
            eps2: factor * p2,
            peak_xi1: p1,
            peak_xi2: p2,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let f = CalibrationFile {
            w: self.baseline.w,
            eps1: self.eps1,
            eps2: self.eps2,
            peak_xi1: self.peak_xi1,
            peak_xi2: self.peak_xi2,
            mu_star: self.baseline.mu_star.iter().cloned().collect(),
            sigma_star: rows_of(&self.baseline.sigma_star),
        };
        toml::to_string(&f).map_err(|e| Error::Config(format!("cannot encode calibration: {e}")))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: CalibrationFile = toml::from_str(s)
            .map_err(|e| Error::Config(format!("invalid calibration file: {e}")))?;
        let n = f.mu_star.len();
        Ok(Self {
            baseline: BaselineStats {
                mu_star: Vector::from_vec(f.mu_star),
                sigma_star: mat_from_rows(&f.sigma_star, n, n, "sigma_star")?,
                w: f.w,
            },
            eps1: f.eps1,
            eps2: f.eps2,
            peak_xi1: f.peak_xi1,
            peak_xi2: f.peak_xi2,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Moving windows, prediction state and latest decision of one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub m_window: VecDeque<Vector>,
    pub m_hat_window: VecDeque<Vector>,
    pub x_hat: Vector,
    pub eps1: f64,
    pub eps2: f64,
    pub flag: bool,
    pub xi1: f64,
    pub xi2: f64,
    pub w: usize,
    pub placement: WatermarkPlacement,
}

impl DetectorState {
    pub fn new(order: usize, w: usize, eps1: f64, eps2: f64) -> Self {
        Self {
            m_window: VecDeque::with_capacity(w + 1),
            m_hat_window: VecDeque::with_capacity(w + 1),
            x_hat: Vector::zeros(order),
            eps1,
            eps2,
            flag: false,
            xi1: 0.0,
            xi2: 0.0,
            w,
            placement: WatermarkPlacement::Input,
        }
    }

    pub fn warmed_up(&self) -> bool {
        self.m_window.len() == self.w
    }

    /// Innovations currently held in the windows, oldest first.
    pub fn innovations(&self) -> Vec<Vector> {
        self.m_window
            .iter()
            .zip(&self.m_hat_window)
            .map(|(m, p)| m - p)
            .collect()
    }

    /// Latest innovation (received minus predicted).
    pub fn last_innovation(&self) -> Option<Vector> {
        Some(self.m_window.back()? - self.m_hat_window.back()?)
    }

    /// Recomputes `ξ₁, ξ₂` and the flag from the current windows.
    pub fn evaluate(&mut self, baseline: &BaselineStats) {
        if !self.warmed_up() {
            self.flag = false;
            self.xi1 = 0.0;
            self.xi2 = 0.0;
            return;
        }
        let innov = self.innovations();
        let dim = innov[0].len();
        let (mu, sigma) = window_stats(&innov, dim);
        let (x1, x2) = test_statistics(&mu, &sigma, baseline);
        self.xi1 = x1;
        self.xi2 = x2;
        self.flag = !(x1 < self.eps1 && x2 < self.eps2);
    }
}

/// One pass of the detection algorithm. `d_omega_s` and `e` are the command
/// and watermark applied over the interval that just ended.
pub fn dw_step(
    state: &mut DetectorState,
    baseline: &BaselineStats,
    model: &DiscreteModel,
    received_p: &Vector,
    d_omega_s: &Vector,
    e: &Vector,
) -> Result<bool> {
    if received_p.len() != model.n_outputs() {
        return Err(Error::dim("dw_step received_p", model.n_outputs(), received_p.len()));
    }
    let (x, p_hat) = predict_step_with(model, &state.x_hat, d_omega_s, e, state.placement)?;
    state.x_hat = x;
    state.m_window.push_back(received_p.clone());
    state.m_hat_window.push_back(p_hat);
    while state.m_window.len() > state.w {
        state.m_window.pop_front();
        state.m_hat_window.pop_front();
    }
    state.evaluate(baseline);
    if !(state.xi1.is_finite() && state.xi2.is_finite()) {
        log::warn!("non-finite detector statistics (xi1 = {}, xi2 = {})", state.xi1, state.xi2);
    }
    Ok(state.flag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> DiscreteModel {
        DiscreteModel::new(
            Mat::from_row_slice(2, 2, &[0.9, 0.05, -0.05, 0.8]),
            Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            Mat::from_row_slice(1, 2, &[2.0, 1.0]),
            0.005,
        )
        .unwrap()
    }

    #[test]
    fn zero_covariance_gives_zero_watermark() {
        let cfg = WatermarkConfig {
            sigma: Mat::zeros(3, 3),
            seed: 1,
        };
        assert_eq!(draw_watermark(&cfg).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn watermark_is_deterministic() {
        let cfg = WatermarkConfig::isotropic(2, 0.02, 9);
        let mut a = Watermark::new(&cfg).unwrap();
        let mut b = Watermark::new(&cfg).unwrap();
        for _ in 0..50 {
            assert_eq!(a.draw(), b.draw());
        }
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cfg = WatermarkConfig {
            sigma: Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            seed: 0,
        };
        assert!(Watermark::new(&cfg).is_err());
    }

    #[test]
    fn prediction_superposition() {
        let m = model();
        let x0 = Vector::from_vec(vec![0.3, -0.1]);
        let u = Vector::from_element(1, 0.2);
        let e = Vector::from_element(1, -0.05);
        let (_, with) = predict_step(&m, &x0, &u, &e).unwrap();
        let (_, without) = predict_step(&m, &x0, &u, &Vector::zeros(1)).unwrap();
        let (_, only_e) = predict_step(&m, &Vector::zeros(2), &Vector::zeros(1), &e).unwrap();
        assert_relative_eq!(with - without, only_e, epsilon = 1e-15);
    }

    #[test]
    fn window_stats_population_normalization() {
        let v: Vec<Vector> = [1.0, 3.0].iter().map(|x| Vector::from_element(1, *x)).collect();
        let (mu, s) = window_stats(&v, 1);
        assert_eq!(mu[0], 2.0);
        assert_eq!(s[(0, 0)], 1.0);
    }

    #[test]
    fn exact_prediction_never_flags() {
        let m = model();
        let base = BaselineStats {
            mu_star: Vector::zeros(1),
            sigma_star: Mat::zeros(1, 1),
            w: 10,
        };
        let mut st = DetectorState::new(2, 10, 1e-12, 1e-12);
        let mut truth = Vector::zeros(2);
        let mut wm = Watermark::new(&WatermarkConfig::isotropic(1, 0.02, 4)).unwrap();
        let mut e_prev = Vector::zeros(1);
        for k in 0..50 {
            let u = Vector::from_element(1, (k as f64 * 0.1).sin());
            truth = &m.a_d * truth + &m.b_d * (&u + &e_prev);
            let y = &m.c_d * &truth;
            let flag = dw_step(&mut st, &base, &m, &y, &u, &e_prev).unwrap();
            assert!(!flag);
            e_prev = wm.draw();
            assert!(st.m_window.len() <= 10);
        }
        assert!(st.warmed_up());
        assert!(st.xi1 < 1e-12 && st.xi2 < 1e-12);
    }

    #[test]
    fn calibration_round_trip() {
        let innov: Vec<Vector> = (0..30)
            .map(|k| Vector::from_vec(vec![(k as f64).sin(), (k as f64 * 0.3).cos()]))
            .collect();
        let c = Calibration::from_nominal(&innov, 10, 2.0).unwrap();
        assert_eq!(c.eps2, 2.0 * c.peak_xi2);
        let back = Calibration::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
