//! Exact zero-order-hold discretization of the continuous plant.

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::netmodel::LinearPlant;

/// `(e^{Ah}, ∫₀ʰ e^{As} ds · B)` from one augmented matrix exponential.
pub fn zoh(a: &Mat, b: &Mat, h: f64) -> Result<(Mat, Mat)> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "integration step must be positive, got {h}"
        )));
    }
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n {
        return Err(Error::dim("zoh B rows", n, b.nrows()));
    }
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * h));
    let e = aug.exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

/// Cached one-step map for a fixed plant and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub phi: Mat,
    pub gamma_u: Mat,
    pub gamma_l: Mat,
    pub h: f64,
}

impl Discretization {
    pub fn new(plant: &LinearPlant, h: f64) -> Result<Self> {
        let (n, m) = (plant.n_ibr(), plant.n_load());
        let mut b = Mat::zeros(plant.n_states(), n + m);
        b.view_mut((0, 0), (plant.n_states(), n)).copy_from(&plant.b1);
        b.view_mut((0, n), (plant.n_states(), m)).copy_from(&plant.f);
        let (phi, gamma) = zoh(&plant.a, &b, h)?;
        Ok(Self {
            phi,
            gamma_u: gamma.columns(0, n).into_owned(),
            gamma_l: gamma.columns(n, m).into_owned(),
            h,
        })
    }

    pub fn step(&self, x: &Vector, d_omega_s: &Vector, d_p_l: &Vector) -> Vector {
        let mut next = &self.phi * x + &self.gamma_u * d_omega_s;
        if !d_p_l.is_empty() {
            next += &self.gamma_l * d_p_l;
        }
        next
    }
}

/// One exact ZOH step of `ẋ = Ax + B₁Δω_s + FΔP_L`.
pub fn integrate_step(
    plant: &LinearPlant,
    x: &Vector,
    d_omega_s: &Vector,
    d_p_l: &Vector,
    h: f64,
) -> Result<Vector> {
    if x.len() != plant.n_states() {
        return Err(Error::dim("integrate_step x", plant.n_states(), x.len()));
    }
    if d_omega_s.len() != plant.n_ibr() {
        return Err(Error::dim("integrate_step d_omega_s", plant.n_ibr(), d_omega_s.len()));
    }
    if d_p_l.len() != plant.n_load() {
        return Err(Error::dim("integrate_step d_p_l", plant.n_load(), d_p_l.len()));
    }
    Ok(Discretization::new(plant, h)?.step(x, d_omega_s, d_p_l))
}
