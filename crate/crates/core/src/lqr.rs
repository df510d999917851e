//! z-space optimal μAGC design and the control laws that run on it.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    min_symmetric_eigenvalue, solve_lyapunov, spectral_abscissa, symmetrize, Mat, Vector,
};
use crate::netmodel::{IbrParams, LinearPlant};
use crate::transform::Transform;

pub const CARE_TOL: f64 = 1e-8;
const SIGN_MAX_ITER: usize = 100;
const NEWTON_MAX_ITER: usize = 8;

/// Diagonal LQR weights, one entry per IBR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl CostWeights {
    pub fn new(q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        if q.len() != r.len() {
            return Err(Error::dim("CostWeights r", q.len(), r.len()));
        }
        if let Some(v) = q.iter().chain(&r).find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "LQR weights must be positive and finite, got {v}"
            )));
        }
        Ok(Self { q, r })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            q: vec![1.0; n],
            r: vec![1.0; n],
        }
    }

    pub fn q_matrix(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(&self.q))
    }

    pub fn r_matrix(&self) -> Mat {
        Mat::from_diagonal(&Vector::from_column_slice(&self.r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: Mat,
    /// Frobenius norm of the Riccati residual divided by max(‖P‖, ‖Q‖).
    pub relative_residual: f64,
}

fn riccati_residual(a: &Mat, s: &Mat, q: &Mat, p: &Mat) -> Mat {
    a.transpose() * p + p * a - p * s * p + q
}

fn relative(res: &Mat, p: &Mat, q: &Mat) -> f64 {
    let scale = p.norm().max(q.norm());
    if scale == 0.0 {
        res.norm()
    } else {
        res.norm() / scale
    }
}

/// PBH test on every eigenvalue with non-negative real part.
pub fn check_stabilizable(a: &Mat, b: &Mat) -> Result<()> {
    let n = a.nrows();
    let scale = a.norm().max(b.norm()).max(1.0);
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.re < -1e-9 * scale {
            continue;
        }
        let m = Mat::zeros(n, n + b.ncols());
        let mut pbh = m.map(|v| Complex::new(v, 0.0));
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lambda;
            for j in 0..b.ncols() {
                pbh[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 1e-10 * scale {
            return Err(Error::Design(format!(
                "pair (A, B) is not stabilizable: mode λ = {:.6e}{:+.6e}i is uncontrollable",
                lambda.re, lambda.im
            )));
        }
    }
    Ok(())
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &Mat) -> Result<Mat> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..SIGN_MAX_ITER {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or_else(|| {
            Error::Design("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let c = if det.abs() > 0.0 && det.is_finite() {
            det.abs().powf(-1.0 / dim)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let delta = (&next - &z).norm();
        z = next;
        if !z.iter().all(|v| v.is_finite()) {
            break;
        }
        if delta <= 1e-13 * z.norm() {
            return Ok(z);
        }
    }
    Err(Error::Design(
        "matrix sign iteration did not converge (imaginary-axis Hamiltonian eigenvalues)".into(),
    ))
}

/// Stabilizing solution of `AᵀP + PA − P B R⁻¹ Bᵀ P + Q = 0`.
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<CareSolution> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::dim("solve_care A columns", n, a.ncols()));
    }
    if b.nrows() != n {
        return Err(Error::dim("solve_care B rows", n, b.nrows()));
    }
    if q.shape() != (n, n) {
        return Err(Error::dim("solve_care Q", n, q.nrows()));
    }
    if r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::dim("solve_care R", b.ncols(), r.nrows()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Design("R is not positive definite".into()))?
        .inverse();
    if min_symmetric_eigenvalue(q) < -1e-12 * q.norm().max(1.0) {
        return Err(Error::Design("Q is not positive semidefinite".into()));
    }
    let q = symmetrize(q);
    check_stabilizable(a, b)?;

    let s = symmetrize(&(b * &r_inv * b.transpose()));
    let mut ham = Mat::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&s));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let w = matrix_sign(&ham)?;

    let eye = Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-w.view((n, 0), (n, n))));
    let mut p = symmetrize(&crate::linalg::lstsq(&lhs, &rhs, 1e-14)?);

    let mut rel = relative(&riccati_residual(a, &s, &q, &p), &p, &q);
    for _ in 0..NEWTON_MAX_ITER {
        if rel <= 1e-3 * CARE_TOL {
            break;
        }
        let k = &r_inv * b.transpose() * &p;
        let acl = a - b * &k;
        let rhs = &q + k.transpose() * r * &k;
        let Ok(candidate) = solve_lyapunov(&acl, &rhs) else {
            break;
        };
        let cand_rel = relative(&riccati_residual(a, &s, &q, &candidate), &candidate, &q);
        if cand_rel >= rel {
            break;
        }
        p = candidate;
        rel = cand_rel;
    }
    if rel > CARE_TOL {
        return Err(Error::Design(format!(
            "Riccati residual {rel:.3e} exceeds tolerance {CARE_TOL:.0e}"
        )));
    }
    let scale = p.norm().max(1.0);
    if min_symmetric_eigenvalue(&p) < -1e-10 * scale {
        return Err(Error::Design(
            "Riccati solution is not positive semidefinite".into(),
        ));
    }
    Ok(CareSolution {
        p,
        relative_residual: rel,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGain {
    /// State-feedback gain `K′ = R⁻¹B₁ᵀP`.
    pub k_prime: Mat,
    /// z-feedback gain `K = K′Tᵀ(TTᵀ)⁻¹`.
    pub k: Mat,
    pub care_solution: Mat,
    pub riccati_residual: f64,
    /// Spectral abscissa of `A − B₁K′`.
    pub abscissa_state: f64,
    /// Spectral abscissa of `A − B₁KT`.
    pub abscissa_projected: f64,
}

pub fn lqr_gain(
    plant: &LinearPlant,
    weights: &CostWeights,
    transform: &Transform,
) -> Result<ControllerGain> {
    let n = plant.n_ibr();
    if weights.q.len() != n {
        return Err(Error::dim("lqr_gain weights", n, weights.q.len()));
    }
    if transform.n_ibr() != n {
        return Err(Error::dim("lqr_gain transform", n, transform.n_ibr()));
    }
    let t = &transform.t;
    let q_prime = t.transpose() * weights.q_matrix() * t;
    let r = weights.r_matrix();
    let care = solve_care(&plant.a, &plant.b1, &q_prime, &r)?;
    let r_inv = Mat::from_diagonal(&Vector::from_iterator(n, weights.r.iter().map(|v| 1.0 / v)));
    let k_prime = r_inv * plant.b1.transpose() * &care.p;
    let ttt = t * t.transpose();
    let ttt_inv = ttt
        .try_inverse()
        .ok_or_else(|| Error::Design("T Tᵀ is singular".into()))?;
    let k = &k_prime * t.transpose() * ttt_inv;
    let abscissa_state = spectral_abscissa(&(&plant.a - &plant.b1 * &k_prime));
    let projected = &plant.a - &plant.b1 * &k * t;
    let abscissa_projected = spectral_abscissa(&projected);
    if abscissa_state >= 0.0 {
        return Err(Error::Design(format!(
            "LQR closed loop is not stable (spectral abscissa {abscissa_state:.3e})"
        )));
    }
    if abscissa_projected >= 0.0 {
        let spectrum: Vec<String> = projected
            .complex_eigenvalues()
            .iter()
            .map(|l| format!("{:.4e}{:+.4e}i", l.re, l.im))
            .collect();
        log::warn!(
            "projected z-space loop A - B1 K T is unstable; spectrum: [{}]",
            spectrum.join(", ")
        );
    }
    Ok(ControllerGain {
        k_prime,
        k,
        care_solution: care.p,
        riccati_residual: care.relative_residual,
        abscissa_state,
        abscissa_projected,
    })
}

/// `Δω_s = −K z`
pub fn control_optimal(gain: &ControllerGain, z: &Vector) -> Vector {
    -(&gain.k * z)
}

/// `Δω_si = m_Pi ΔP_Gi`
pub fn control_decentralized(ibrs: &[IbrParams], d_p_g: &Vector) -> Vector {
    Vector::from_fn(ibrs.len(), |i, _| ibrs[i].m_p * d_p_g[i])
}

/// State of the prediction-driven corrective law.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: Vector,
    pub z_hat: Vector,
}

/// `Δω_s = −K ẑ`
pub fn control_observer(gain: &ControllerGain, obs: &ObserverState) -> Vector {
    -(&gain.k * &obs.z_hat)
}

/// Discrete PI regulator with a symmetric integrator clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    pub integrator: Vector,
    pub clamp: Option<f64>,
}

impl PiController {
    pub fn new(kp: f64, ki: f64, n: usize, clamp: Option<f64>) -> Self {
        Self {
            kp,
            ki,
            integrator: Vector::zeros(n),
            clamp,
        }
    }

    /// Advances the integrator by `error·dt` and returns `kp·error + ki·∫error`.
    pub fn step(&mut self, error: &Vector, dt: f64) -> Vector {
        self.integrator += error * dt;
        if let Some(c) = self.clamp {
            self.integrator.apply(|v| *v = v.clamp(-c, c));
        }
        error * self.kp + &self.integrator * self.ki
    }
}

/// Stateless form of [`PiController::step`].
pub fn control_pi_baseline(
    kp: f64,
    ki: f64,
    measured_error: &Vector,
    dt: f64,
    integrator: &mut Vector,
) -> Vector {
    *integrator += measured_error * dt;
    measured_error * kp + &*integrator * ki
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    #[test]
    fn care_stable_zero_cost() {
        let s = solve_care(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[0.0]), &m(1, 1, &[1.0]))
            .unwrap();
        assert!(s.p[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn care_integrator() {
        let s = solve_care(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]))
            .unwrap();
        assert_relative_eq!(s.p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn care_double_integrator() {
        // Closed form: P = [[√3, 1], [1, √3]] for A = [[0,1],[0,0]], B = [0,1]ᵀ, Q = R = I.
        let s = solve_care(
            &m(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            &m(2, 1, &[0.0, 1.0]),
            &Mat::identity(2, 2),
            &m(1, 1, &[1.0]),
        )
        .unwrap();
        let r3 = 3f64.sqrt();
        assert_relative_eq!(s.p, m(2, 2, &[r3, 1.0, 1.0, r3]), epsilon = 1e-10);
    }

    #[test]
    fn care_rejects_uncontrollable_unstable_mode() {
        let err = solve_care(
            &m(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            &m(2, 1, &[0.0, 1.0]),
            &Mat::identity(2, 2),
            &m(1, 1, &[1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Design(ref s) if s.contains("uncontrollable")));
    }

    #[test]
    fn care_repeated_eigenvalues() {
        let a = crate::linalg::block_diag(&vec![m(2, 2, &[0.0, 1.0, 0.0, -5.0]); 3]);
        let b = crate::linalg::block_diag(&vec![m(2, 1, &[0.0, 5.0]); 3]);
        let s = solve_care(&a, &b, &Mat::identity(6, 6), &Mat::identity(3, 3)).unwrap();
        assert!(s.relative_residual < CARE_TOL);
    }

    #[test]
    fn decentralized_elementwise() {
        let ibrs = [
            IbrParams::new(10.0, 1e-3, 314.0, 0.0).unwrap(),
            IbrParams::new(10.0, 2e-3, 314.0, 0.0).unwrap(),
        ];
        let u = control_decentralized(&ibrs, &Vector::from_vec(vec![100.0, -50.0]));
        assert_relative_eq!(u, Vector::from_vec(vec![0.1, -0.1]), epsilon = 1e-15);
    }

    #[test]
    fn pi_closed_form() {
        let (kp, ki, dt) = (0.3, 2.0, 0.005);
        let e = Vector::from_element(1, 0.7);
        let mut pi = PiController::new(kp, ki, 1, None);
        let mut out = Vector::zeros(1);
        for _ in 0..40 {
            out = pi.step(&e, dt);
        }
        assert_relative_eq!(out[0], kp * 0.7 + ki * 0.7 * 40.0 * dt, epsilon = 1e-12);
        let mut integ = Vector::zeros(1);
        assert_eq!(control_pi_baseline(kp, ki, &Vector::zeros(1), dt, &mut integ)[0], 0.0);
    }

    #[test]
    fn pi_clamp() {
        let mut pi = PiController::new(0.0, 1.0, 1, Some(0.1));
        for _ in 0..100 {
            pi.step(&Vector::from_element(1, 1.0), 0.01);
        }
        assert_eq!(pi.integrator[0], 0.1);
    }
}
