//! Left-null-vector transform `z = TΔx` and its measurable integral form.

use crate::error::{Error, Result};
use crate::linalg::{block_diag, Mat, Vector};
use crate::netmodel::IbrParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    /// Per-IBR row vectors `[ω_ci, 1]`.
    pub t_blocks: Vec<[f64; 2]>,
    /// Block-diagonal `N × 2N` assembly.
    pub t: Mat,
}

impl Transform {
    pub fn n_ibr(&self) -> usize {
        self.t_blocks.len()
    }
}

pub fn make_transform(ibrs: &[IbrParams]) -> Transform {
    let t_blocks: Vec<[f64; 2]> = ibrs.iter().map(|p| [p.omega_c, 1.0]).collect();
    let t = block_diag(
        &t_blocks
            .iter()
            .map(|b| Mat::from_row_slice(1, 2, b))
            .collect::<Vec<_>>(),
    );
    Transform { t_blocks, t }
}

pub fn z_from_state(t: &Transform, dx: &Vector) -> Result<Vector> {
    if dx.len() != 2 * t.n_ibr() {
        return Err(Error::dim("z_from_state dx", 2 * t.n_ibr(), dx.len()));
    }
    Ok(Vector::from_fn(t.n_ibr(), |i, _| {
        t.t_blocks[i][0] * dx[2 * i] + t.t_blocks[i][1] * dx[2 * i + 1]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    Euler,
    Trapezoid,
}

/// Running value of `zᵢ = ∫ ω_ci(Δω_si − m_Pi ΔP_Gi) dt`, started at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ZAccumulator {
    pub z: Vector,
    pub t_now: f64,
    last_integrand: Option<Vector>,
}

impl ZAccumulator {
    pub fn new(n_ibr: usize) -> Self {
        Self {
            z: Vector::zeros(n_ibr),
            t_now: 0.0,
            last_integrand: None,
        }
    }

    pub fn with_value(z: Vector, t_now: f64) -> Self {
        Self {
            z,
            t_now,
            last_integrand: None,
        }
    }
}

fn integrand(d_omega_s: &Vector, d_p_g: &Vector, ibrs: &[IbrParams]) -> Vector {
    Vector::from_fn(ibrs.len(), |i, _| {
        ibrs[i].omega_c * (d_omega_s[i] - ibrs[i].m_p * d_p_g[i])
    })
}

/// One quadrature step of the z integral.
pub fn z_update(
    acc: &ZAccumulator,
    d_omega_s: &Vector,
    d_p_g: &Vector,
    dt: f64,
    ibrs: &[IbrParams],
) -> Result<ZAccumulator> {
    z_update_with(acc, d_omega_s, d_p_g, dt, ibrs, Quadrature::Euler)
}

pub fn z_update_with(
    acc: &ZAccumulator,
    d_omega_s: &Vector,
    d_p_g: &Vector,
    dt: f64,
    ibrs: &[IbrParams],
    rule: Quadrature,
) -> Result<ZAccumulator> {
    let n = acc.z.len();
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "z_update step must be positive, got {dt}"
        )));
    }
    for (ctx, len) in [
        ("z_update d_omega_s", d_omega_s.len()),
        ("z_update d_p_g", d_p_g.len()),
        ("z_update ibrs", ibrs.len()),
    ] {
        if len != n {
            return Err(Error::dim(ctx, n, len));
        }
    }
    let f = integrand(d_omega_s, d_p_g, ibrs);
    let z = match (rule, &acc.last_integrand) {
        (Quadrature::Trapezoid, Some(prev)) => &acc.z + (prev + &f) * (0.5 * dt),
        _ => &acc.z + &f * dt,
    };
    Ok(ZAccumulator {
        z,
        t_now: acc.t_now + dt,
        last_integrand: Some(f),
    })
}
