//! Small dense linear-algebra helpers shared by the design and identification code.

use nalgebra::{DMatrix, DVector, Dyn, SVD};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus of `a`.
pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Solves `aᵀ X + X a = -m` for symmetric `m` via the Kronecker form.
/// Intended for the small systems that appear in controller design.
pub fn solve_lyapunov(a: &Mat, m: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = Mat::identity(n, n);
    let op = at.kronecker(&eye) + eye.kronecker(&at);
    let rhs = -DVector::from_column_slice(m.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Design("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&Mat::from_column_slice(n, n, sol.as_slice())))
}

/// Thin singular value decomposition, sorted in decreasing order.
///
/// Computed with faer; nalgebra's own SVD stalls on tall matrices with
/// clustered singular values.
pub fn svd(a: &Mat) -> SVD<f64, Dyn, Dyn> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return SVD::new(a.clone(), true, true);
    }
    let f = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    match f.thin_svd() {
        Ok(d) => {
            let (u, v, s) = (d.U(), d.V(), d.S().column_vector());
            SVD {
                u: Some(Mat::from_fn(a.nrows(), k, |i, j| u[(i, j)])),
                v_t: Some(Mat::from_fn(k, a.ncols(), |i, j| v[(j, i)])),
                singular_values: Vector::from_fn(k, |i, _| s[i]),
            }
        }
        Err(e) => {
            log::debug!("faer SVD failed ({e:?}), falling back to nalgebra");
            SVD::new(a.clone(), true, true)
        }
    }
}

/// Minimum-norm least-squares solution of `a x = b`, discarding singular
/// values below `rcond` times the largest one.
pub fn lstsq(a: &Mat, b: &Mat, rcond: f64) -> Result<Mat> {
    let svd = svd(a);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (smax * rcond).max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .map_err(|e| Error::Identification(format!("least squares failed: {e}")))
}

/// Least squares with each column of `a` scaled to unit norm first; returns
/// the solution in the original coordinates.
pub fn lstsq_scaled(a: &Mat, b: &Mat, rcond: f64) -> Result<Mat> {
    let norms: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, n) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / n);
    }
    let mut x = lstsq(&scaled, b, rcond)?;
    for (j, n) in norms.iter().enumerate() {
        x.row_mut(j).scale_mut(1.0 / n);
    }
    Ok(x)
}

pub fn pinv(a: &Mat, rcond: f64) -> Result<Mat> {
    let svd = svd(a);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.pseudo_inverse((smax * rcond).max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Identification(format!("pseudo-inverse failed: {e}")))
}

/// Smallest and largest singular values.
pub fn singular_value_range(a: &Mat) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let sv = svd(a).singular_values;
    (sv[sv.len() - 1], sv[0])
}

pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Max-abs entry, 0 for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}
