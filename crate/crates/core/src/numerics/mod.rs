//! Small dense linear algebra used by every estimator: thin SVD, symmetric
//! tridiagonal eigendecomposition, Gram–Schmidt orthonormalization and
//! principal-angle distances.

mod matrix;
mod svd;
mod tridiag;

pub use matrix::{
    all_finite, axpy, canonicalize_columns, canonicalize_sign, dot, norm, DenseMatrix,
};
pub use svd::{orthonormal_basis, svd, thin_svd, Svd, ThinSvd};
pub use tridiag::{tridiag_eigh, TridiagEigen, TridiagonalSpectrum};

use crate::error::{Error, Result};

/// Relative threshold below which a projected vector counts as lying in the span.
pub const DEPENDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Orthonormalized {
    Unit(Vec<f64>),
    /// `v` lies (numerically) in the span of the basis.
    Dependent,
}

/// Orthonormalizes `v` against the columns of `basis` (classical Gram–Schmidt,
/// two passes).
pub fn orthonormalize(basis: &DenseMatrix, v: &[f64]) -> Result<Orthonormalized> {
    if basis.rows() != v.len() && basis.cols() > 0 {
        return Err(Error::Dimension(format!(
            "basis has {} rows, vector has {} entries",
            basis.rows(),
            v.len()
        )));
    }
    let original = norm(v);
    if original == 0.0 {
        return Ok(Orthonormalized::Dependent);
    }
    let mut w = v.to_vec();
    if basis.cols() > 0 {
        for _ in 0..2 {
            let coeffs = basis.t_matvec(&w)?;
            let proj = basis.matvec(&coeffs)?;
            w.iter_mut().zip(&proj).for_each(|(a, b)| *a -= b);
        }
    }
    let rest = norm(&w);
    if rest < DEPENDENCE_TOL * original {
        return Ok(Orthonormalized::Dependent);
    }
    w.iter_mut().for_each(|x| *x /= rest);
    Ok(Orthonormalized::Unit(w))
}

/// Sine of the largest principal angle between the column spans of `u` and `w`.
///
/// Evaluated as `σ_max((I − WWᵀ)U)`, which equals `sqrt(1 − σ_min(UᵀW)²)` for
/// orthonormal inputs but stays accurate when the angle is tiny.
pub fn sin_theta_distance(u: &DenseMatrix, w: &DenseMatrix) -> Result<f64> {
    if u.rows() != w.rows() || u.cols() != w.cols() {
        return Err(Error::Dimension(format!(
            "{}x{} basis against {}x{}",
            u.rows(),
            u.cols(),
            w.rows(),
            w.cols()
        )));
    }
    if u.cols() == 0 {
        return Ok(0.0);
    }
    let coeffs = w.transpose().matmul(u)?;
    let residual = u.sub(&w.matmul(&coeffs)?)?;
    let top = svd(&residual)?.s[0];
    Ok(top.clamp(0.0, 1.0))
}
