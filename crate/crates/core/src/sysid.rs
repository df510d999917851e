//! Data-driven prediction model: rectangular-pulse excitation, a
//! deterministic subspace (PO-MOESP) identification, prediction-error order
//! selection and persistence of models and input/output records.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq_scaled, pinv, spectral_radius, Mat, Vector};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_DT_PRIME: f64 = 0.05;
pub const DEFAULT_K0: usize = 4000;
pub const DEFAULT_CANDIDATES: std::ops::RangeInclusive<usize> = 1..=10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub dt: f64,
    pub dt_prime: f64,
    pub beta: f64,
    pub k0: usize,
    pub seed: u64,
}

impl ExcitationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "excitation dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.dt_prime > self.dt) {
            return Err(Error::InvalidParameter(format!(
                "pulse width {} must exceed the sample time {}",
                self.dt_prime, self.dt
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "excitation amplitude must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Staircase of i.i.d. uniform levels in `[−β, β]`, one column per channel,
/// `k0 + 1` samples.
pub fn generate_excitation(spec: &ExcitationSpec, channels: usize) -> Result<Mat> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows = spec.k0 + 1;
    let pulse_of = |k: usize| ((k as f64 * spec.dt) / spec.dt_prime + 1e-9).floor() as usize;
    let n_pulses = pulse_of(spec.k0) + 1;
    let mut levels = Mat::zeros(n_pulses, channels);
    for p in 0..n_pulses {
        for c in 0..channels {
            levels[(p, c)] = if spec.beta > 0.0 {
                rng.random_range(-spec.beta..=spec.beta)
            } else {
                0.0
            };
        }
    }
    Ok(Mat::from_fn(rows, channels, |k, c| levels[(pulse_of(k), c)]))
}

/// Discrete prediction model `x[k] = A′x[k−1] + B′u[k−1]`, `y[k] = C′x[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub a_d: Mat,
    pub b_d: Mat,
    pub c_d: Mat,
    pub dt: f64,
    pub order: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dt: f64,
    order: usize,
    n_inputs: usize,
    n_outputs: usize,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

pub(crate) fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub(crate) fn mat_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    what: &str,
) -> Result<Mat> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "matrix '{what}' must be {nrows}x{ncols}"
        )));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl DiscreteModel {
    pub fn new(a_d: Mat, b_d: Mat, c_d: Mat, dt: f64) -> Result<Self> {
        let d = a_d.nrows();
        if !a_d.is_square() {
            return Err(Error::dim("DiscreteModel A'", d, a_d.ncols()));
        }
        if b_d.nrows() != d {
            return Err(Error::dim("DiscreteModel B' rows", d, b_d.nrows()));
        }
        if c_d.ncols() != d {
            return Err(Error::dim("DiscreteModel C' columns", d, c_d.ncols()));
        }
        let model = Self {
            a_d,
            b_d,
            c_d,
            dt,
            order: d,
        };
        let rho = model.spectral_radius();
        if rho >= 1.0 + 1e-9 {
            log::warn!("identified model is unstable (spectral radius {rho:.6})");
        }
        Ok(model)
    }

    pub fn n_inputs(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c_d.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a_d)
    }

    /// `C′A′ᵏB′` for k = 0..count.
    pub fn markov_parameters(&self, count: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(count);
        let mut ak_b = self.b_d.clone();
        for _ in 0..count {
            out.push(&self.c_d * &ak_b);
            ak_b = &self.a_d * ak_b;
        }
        out
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ModelFile {
            dt: self.dt,
            order: self.order,
            n_inputs: self.n_inputs(),
            n_outputs: self.n_outputs(),
            a: rows_of(&self.a_d),
            b: rows_of(&self.b_d),
            c: rows_of(&self.c_d),
        };
        toml::to_string(&file).map_err(|e| Error::Config(format!("cannot encode model: {e}")))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: ModelFile =
            toml::from_str(s).map_err(|e| Error::Config(format!("invalid model file: {e}")))?;
        Self::new(
            mat_from_rows(&f.a, f.order, f.order, "a")?,
            mat_from_rows(&f.b, f.order, f.n_inputs, "b")?,
            mat_from_rows(&f.c, f.n_outputs, f.order, "c")?,
            f.dt,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Simulates the model from `x0` over the input rows of `u`. Row `k` of the
/// result is `C′x[k]`.
pub fn predict(model: &DiscreteModel, x0: &Vector, u: &Mat) -> Result<Mat> {
    if x0.len() != model.order {
        return Err(Error::dim("predict x0", model.order, x0.len()));
    }
    if u.ncols() != model.n_inputs() {
        return Err(Error::dim("predict input channels", model.n_inputs(), u.ncols()));
    }
    let mut y = Mat::zeros(u.nrows(), model.n_outputs());
    let mut x = x0.clone();
    for k in 0..u.nrows() {
        if k > 0 {
            x = &model.a_d * &x + &model.b_d * u.row(k - 1).transpose();
        }
        y.set_row(k, &(&model.c_d * &x).transpose());
    }
    Ok(y)
}

/// Least-squares initial state matching the first `samples` outputs.
pub fn estimate_initial_state(
    model: &DiscreteModel,
    u: &Mat,
    y: &Mat,
    samples: usize,
) -> Result<Vector> {
    let d = model.order;
    let k = samples.min(u.nrows());
    let l = model.n_outputs();
    if d == 0 || k == 0 {
        return Ok(Vector::zeros(d));
    }
    let forced = predict(model, &Vector::zeros(d), &u.rows(0, k).into_owned())?;
    let mut reg = Mat::zeros(k * l, d);
    let mut rhs = Mat::zeros(k * l, 1);
    let mut cak = model.c_d.clone();
    for s in 0..k {
        reg.view_mut((s * l, 0), (l, d)).copy_from(&cak);
        for o in 0..l {
            rhs[(s * l + o, 0)] = y[(s, o)] - forced[(s, o)];
        }
        cak = &cak * &model.a_d;
    }
    Ok(lstsq_scaled(&reg, &rhs, 1e-12)?.column(0).into_owned())
}

/// Average per-sample Euclidean prediction error.
pub fn prediction_error(y_hat: &Mat, y: &Mat) -> f64 {
    if y.nrows() == 0 {
        return 0.0;
    }
    (y_hat - y).row_iter().map(|r| r.norm()).sum::<f64>() / y.nrows() as f64
}

fn channel_scales(m: &Mat) -> Vec<f64> {
    m.column_iter()
        .map(|c| {
            let s = c.amax();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect()
}

fn block_hankel(data: &Mat, first: usize, rows: usize, cols: usize) -> Mat {
    let ch = data.ncols();
    Mat::from_fn(rows * ch, cols, |r, c| data[(first + r / ch + c, r % ch)])
}

/// Number of block rows used for a given order and output dimension.
pub fn block_rows(order: usize, outputs: usize) -> usize {
    (order.div_ceil(outputs.max(1)) + 2).max(6)
}

/// Scaled data and the column space estimate shared by all orders that use
/// the same number of block rows.
struct Subspace {
    u_scale: Vec<f64>,
    y_scale: Vec<f64>,
    u: Mat,
    y: Mat,
    i: usize,
    left: Mat,
    sv: Vector,
}

impl Subspace {
    fn new(u: &Mat, y: &Mat, i: usize) -> Result<Self> {
        let (m, l) = (u.ncols(), y.ncols());
        let k = u.nrows();
        if k < 2 * i + 1 {
            return Err(Error::Identification(format!(
                "record of {k} samples is too short for {i} block rows"
            )));
        }
        let u_scale = channel_scales(u);
        let y_scale = channel_scales(y);
        let us = Mat::from_fn(k, m, |r, c| u[(r, c)] / u_scale[c]);
        let ys = Mat::from_fn(k, l, |r, c| y[(r, c)] / y_scale[c]);
        let j = k - 2 * i + 1;
        let up = block_hankel(&us, 0, i, j);
        let uf = block_hankel(&us, i, i, j);
        let yp = block_hankel(&ys, 0, i, j);
        let yf = block_hankel(&ys, i, i, j);

        let u_all = block_hankel(&us, 0, 2 * i, j);
        let (smin, smax) = crate::linalg::singular_value_range(&u_all);
        if !(smin > 1e-10 * smax) {
            return Err(Error::Identification(format!(
                "input is not persistently exciting of order {} (Hankel singular values {smin:.3e}..{smax:.3e})",
                2 * i
            )));
        }

        let rows = 2 * m * i + 2 * l * i;
        let mut stacked = Mat::zeros(rows, j);
        let mut r0 = 0;
        for blk in [&uf, &up, &yp, &yf] {
            stacked.view_mut((r0, 0), (blk.nrows(), j)).copy_from(blk);
            r0 += blk.nrows();
        }
        let qr = stacked.transpose().qr();
        let lower = qr.r().transpose();
        let b3 = 2 * m * i + l * i;
        let l32 = lower
            .view((b3, m * i), (l * i, m * i + l * i))
            .into_owned();
        let svd = crate::linalg::svd(&l32);
        let left = svd
            .u
            .ok_or_else(|| Error::Identification("SVD did not return U".into()))?;
        Ok(Self {
            u_scale,
            y_scale,
            u: us,
            y: ys,
            i,
            left,
            sv: svd.singular_values,
        })
    }

    fn model(&self, d: usize, dt: f64) -> Result<DiscreteModel> {
        let (m, l, i) = (self.u.ncols(), self.y.ncols(), self.i);
        if d == 0 || d > i * l || d > self.sv.len() {
            return Err(Error::Identification(format!(
                "order {d} is outside 1..={} for {i} block rows",
                (i * l).min(self.sv.len())
            )));
        }
        if self.sv[d - 1] == 0.0 {
            return Err(Error::Identification(format!(
                "Hankel data has rank below the requested order {d}"
            )));
        }
        let gamma = self.left.columns(0, d).into_owned();
        let c = gamma.rows(0, l).into_owned();
        let up = gamma.rows(0, l * (i - 1)).into_owned();
        let down = gamma.rows(l, l * (i - 1)).into_owned();
        let a = pinv(&up, 1e-13)? * down;

        // Outputs are linear in (x0, B): regress on simulated responses.
        let k = self.u.nrows();
        let n_par = d + d * m;
        let mut reg = Mat::zeros(k * l, n_par);
        let mut cak = c.clone();
        for s in 0..k {
            reg.view_mut((s * l, 0), (l, d)).copy_from(&cak);
            cak = &cak * &a;
        }
        for r in 0..d {
            for ch in 0..m {
                let col = d + r * m + ch;
                let mut x = Vector::zeros(d);
                for s in 1..k {
                    x = &a * &x;
                    x[r] += self.u[(s - 1, ch)];
                    let y = &c * &x;
                    for o in 0..l {
                        reg[(s * l + o, col)] = y[o];
                    }
                }
            }
        }
        let rhs = Mat::from_fn(k * l, 1, |r, _| self.y[(r / l, r % l)]);
        let theta = lstsq_scaled(&reg, &rhs, 1e-13)?;
        let b = Mat::from_fn(d, m, |r, ch| theta[(d + r * m + ch, 0)] / self.u_scale[ch]);
        let c_out = Mat::from_fn(l, d, |o, j| c[(o, j)] * self.y_scale[o]);
        DiscreteModel::new(a, b, c_out, dt)
    }
}

fn check_record(u: &Mat, y: &Mat) -> Result<()> {
    if u.nrows() != y.nrows() {
        return Err(Error::dim("identify record length", u.nrows(), y.nrows()));
    }
    if u.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::Identification("record has no channels".into()));
    }
    Ok(())
}

fn zero_model(d: usize, m: usize, l: usize, dt: f64) -> DiscreteModel {
    DiscreteModel {
        a_d: Mat::zeros(d, d),
        b_d: Mat::zeros(d, m),
        c_d: Mat::zeros(l, d),
        dt,
        order: d,
    }
}

fn is_silent(u: &Mat, y: &Mat) -> bool {
    u.iter().all(|v| *v == 0.0) && y.iter().all(|v| *v == 0.0)
}

/// Fits an order-`d` model to one input/output record.
pub fn identify(u: &Mat, y: &Mat, d: usize, dt: f64) -> Result<DiscreteModel> {
    check_record(u, y)?;
    if is_silent(u, y) {
        return Ok(zero_model(d, u.ncols(), y.ncols(), dt));
    }
    let need = 10 * d * u.ncols().max(y.ncols());
    if u.nrows() < need {
        return Err(Error::Identification(format!(
            "record of {} samples is shorter than the required {need}",
            u.nrows()
        )));
    }
    Subspace::new(u, y, block_rows(d, y.ncols()))?.model(d, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub candidates: Vec<usize>,
    /// Average prediction error per candidate, `None` when the fit failed.
    pub eta: Vec<Option<f64>>,
    pub failures: Vec<Option<String>>,
    pub d_star: usize,
    /// Number of leading samples used to estimate the scoring initial state.
    pub x0_samples: Vec<usize>,
    pub output_scale: f64,
}

impl OrderReport {
    pub fn eta_star(&self) -> f64 {
        let idx = self
            .candidates
            .iter()
            .position(|&d| d == self.d_star)
            .expect("d_star is a candidate");
        self.eta[idx].expect("selected order has a score")
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("order,eta,x0_samples,selected,note\n");
        for (k, d) in self.candidates.iter().enumerate() {
            let eta = self.eta[k].map(|e| format!("{e:.8e}")).unwrap_or_default();
            let note = self.failures[k].as_deref().unwrap_or("").replace(',', ";");
            s.push_str(&format!(
                "{d},{eta},{},{},{note}\n",
                self.x0_samples[k],
                u8::from(*d == self.d_star)
            ));
        }
        s
    }
}

/// Relative tolerance under which two prediction errors count as equal.
pub const ETA_TIE_TOL: f64 = 1e-9;

/// Scores a fitted model on the record: initial state from the leading
/// samples, then an open-loop re-simulation.
pub fn score_model(model: &DiscreteModel, u: &Mat, y: &Mat) -> Result<(f64, usize)> {
    let samples = (2 * model.order).max(20);
    let x0 = estimate_initial_state(model, u, y, samples)?;
    let y_hat = predict(model, &x0, u)?;
    Ok((prediction_error(&y_hat, y), samples))
}

/// Fits every candidate order and picks the one with the lowest average
/// prediction error; near-ties go to the smaller order.
pub fn select_order(
    u: &Mat,
    y: &Mat,
    candidates: &[usize],
    dt: f64,
) -> Result<(DiscreteModel, OrderReport)> {
    check_record(u, y)?;
    if candidates.is_empty() {
        return Err(Error::Identification("no candidate orders".into()));
    }
    let output_scale = y.amax();
    let mut cache: Vec<(usize, std::result::Result<Subspace, String>)> = Vec::new();
    let mut models = Vec::new();
    let mut eta = Vec::new();
    let mut failures = Vec::new();
    let mut x0_samples = Vec::new();
    for &d in candidates {
        let fit = if is_silent(u, y) {
            Ok(zero_model(d, u.ncols(), y.ncols(), dt))
        } else {
            let i = block_rows(d, y.ncols());
            if !cache.iter().any(|(k, _)| *k == i) {
                cache.push((i, Subspace::new(u, y, i).map_err(|e| e.to_string())));
            }
            match &cache.iter().find(|(k, _)| *k == i).expect("cached").1 {
                Ok(sub) => sub.model(d, dt),
                Err(e) => Err(Error::Identification(e.clone())),
            }
        };
        match fit.and_then(|m| score_model(&m, u, y).map(|s| (m, s))) {
            Ok((m, (e, n))) if e.is_finite() => {
                eta.push(Some(e));
                failures.push(None);
                x0_samples.push(n);
                models.push(Some(m));
            }
            Ok((_, (e, n))) => {
                eta.push(None);
                failures.push(Some(format!("non-finite prediction error {e}")));
                x0_samples.push(n);
                models.push(None);
            }
            Err(err) => {
                log::debug!("order {d} failed: {err}");
                eta.push(None);
                failures.push(Some(err.to_string()));
                x0_samples.push(0);
                models.push(None);
            }
        }
    }
    let best = eta
        .iter()
        .filter_map(|e| *e)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        let msgs: Vec<String> = candidates
            .iter()
            .zip(&failures)
            .map(|(d, f)| format!("d={d}: {}", f.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Identification(format!(
            "all candidate orders failed ({})",
            msgs.join("; ")
        )));
    }
    let tol = ETA_TIE_TOL * output_scale.max(f64::MIN_POSITIVE);
    let pick = (0..candidates.len())
        .filter(|&k| matches!(eta[k], Some(e) if e - best <= tol))
        .min_by_key(|&k| candidates[k])
        .expect("at least one scored candidate");
    let model = models[pick].take().expect("scored candidate has a model");
    let report = OrderReport {
        candidates: candidates.to_vec(),
        eta,
        failures,
        d_star: candidates[pick],
        x0_samples,
        output_scale,
    };
    Ok((model, report))
}

/// Time-stamped input/output record (`time, u1..uN, y1..yN`).
#[derive(Debug, Clone, PartialEq)]
pub struct IoRecord {
    pub time: Vec<f64>,
    pub u: Mat,
    pub y: Mat,
}

impl IoRecord {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.u.ncols()).map(|i| format!("u{i}")));
        header.extend((1..=self.y.ncols()).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for k in 0..self.time.len() {
            let mut row = vec![format!("{:.8e}", self.time[k])];
            row.extend(self.u.row(k).iter().map(|v| format!("{v:.16e}")));
            row.extend(self.y.row(k).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n_u = header.iter().filter(|h| h.starts_with('u')).count();
        let n_y = header.iter().filter(|h| h.starts_with('y')).count();
        if header.get(0) != Some("time") || n_u + n_y + 1 != header.len() {
            return Err(Error::Parse {
                line: 1,
                message: "expected header 'time,u1..uN,y1..yN'".into(),
            });
        }
        let mut time = Vec::new();
        let mut vals = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let mut row = Vec::with_capacity(rec.len());
            for f in rec.iter() {
                row.push(f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("invalid number '{f}': {e}"),
                })?);
            }
            time.push(row[0]);
            vals.push(row);
        }
        let k = vals.len();
        Ok(Self {
            time,
            u: Mat::from_fn(k, n_u, |i, j| vals[i][1 + j]),
            y: Mat::from_fn(k, n_y, |i, j| vals[i][1 + n_u + j]),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
