//! Dense kernels used by the LQR environments.
//!
//! Storage is [`nalgebra::DMatrix`]; this module adds the handful of
//! operations the environments need on top of it: the symmetric fixed-point
//! solve for discrete Lyapunov-type equations, a spectral radius, and
//! Gaussian sampling through a semidefinite Cholesky factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Margin below 1 that a spectral radius must respect for fixed-point solves.
pub const STABILITY_MARGIN: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Residual floor of the fixed-point iteration in units of `ε·n·‖X‖∞`.
const ROUNDING_ULPS: f64 = 64.0;

/// Diagonal jitter added when a covariance is numerically indefinite.
const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatError {
    #[error("spectral radius {radius} is not below 1 - {STABILITY_MARGIN}")]
    NotContractive { radius: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("matrix is not positive semidefinite (pivot {pivot} at index {index})")]
    NotPsd { index: usize, pivot: f64 },
    #[error("expected a {expected} matrix, got {rows}x{cols}")]
    Shape { expected: &'static str, rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
}

/// Which side of the unknown the transpose sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransposeSide {
    /// `X = C + Mᵀ X M`
    Left,
    /// `X = C + M X Mᵀ`
    Right,
}

fn require_square(m: &Matrix) -> Result<usize, MatError> {
    if m.nrows() != m.ncols() {
        return Err(MatError::Shape { expected: "square", rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn apply_map(m: &Matrix, x: &Matrix, side: TransposeSide) -> Matrix {
    match side {
        TransposeSide::Left => m.tr_mul(x) * m,
        TransposeSide::Right => m * x * m.transpose(),
    }
}

/// Residual `C + map(X) - X` in the induced infinity norm.
pub fn fixed_point_residual(m: &Matrix, c: &Matrix, x: &Matrix, side: TransposeSide) -> f64 {
    inf_norm(&(c + apply_map(m, x, side) - x))
}

/// Solves `X = C + MᵀXM` (or `X = C + MXMᵀ`) by iterating the map from `X₀ = C`.
///
/// The iteration stops at the first iterate whose own residual is within
/// `tol`, so the returned matrix satisfies the equation to `tol` in the
/// induced infinity norm. When `X` is so large that rounding alone exceeds
/// `tol`, the bound is relaxed to a few ulps of `‖X‖∞`.
pub fn fixed_point_quadratic(
    m: &Matrix,
    c: &Matrix,
    side: TransposeSide,
    tol: f64,
    max_iter: usize,
) -> Result<Matrix, MatError> {
    let n = require_square(m)?;
    if c.nrows() != n || c.ncols() != n {
        return Err(MatError::Shape { expected: "C matching M", rows: c.nrows(), cols: c.ncols() });
    }
    if !is_finite(m) || !is_finite(c) {
        return Err(MatError::NonFinite);
    }
    let radius = spectral_radius(m)?;
    if radius >= 1.0 - STABILITY_MARGIN {
        return Err(MatError::NotContractive { radius });
    }

    let mut x = symmetrize(c);
    for _ in 0..max_iter {
        let next = symmetrize(&(c + apply_map(m, &x, side)));
        // `next - x` is exactly the residual of `x`.
        let floor = ROUNDING_ULPS * f64::EPSILON * n as f64 * inf_norm(&x);
        if inf_norm(&(&next - &x)) <= tol.max(floor) {
            return Ok(x);
        }
        x = next;
    }
    Err(MatError::NoConvergence { what: "fixed-point iteration", iterations: max_iter })
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(m: &Matrix) -> Result<f64, MatError> {
    let n = require_square(m)?;
    if n == 0 {
        return Ok(0.0);
    }
    if !is_finite(m) {
        return Err(MatError::NonFinite);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(MatError::NoConvergence { what: "Schur decomposition", iterations: 10_000 })?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Lower-triangular `L` with `L Lᵀ = S` for symmetric positive semidefinite `S`.
///
/// Zero pivots produce zero columns, so rank-deficient covariances (including
/// `S = 0`) factor exactly. A single retry with diagonal jitter is made before
/// reporting [`MatError::NotPsd`].
pub fn psd_cholesky(s: &Matrix) -> Result<Matrix, MatError> {
    let n = require_square(s)?;
    if !is_finite(s) {
        return Err(MatError::NonFinite);
    }
    let scale = (0..n).map(|i| s[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    match factor_semidefinite(s, scale) {
        Ok(l) => Ok(l),
        Err(_) => {
            let jittered = s + Matrix::identity(n, n) * CHOLESKY_JITTER;
            factor_semidefinite(&jittered, scale)
        }
    }
}

fn factor_semidefinite(s: &Matrix, scale: f64) -> Result<Matrix, MatError> {
    let n = s.nrows();
    let zero_tol = 1e-14 * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let pivot = s[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if pivot < -zero_tol {
            return Err(MatError::NotPsd { index: j, pivot });
        }
        if pivot <= zero_tol {
            // Semidefinite direction: the rest of the column must vanish too.
            for i in (j + 1)..n {
                let off = s[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                if off.abs() > 1e-8 * scale {
                    return Err(MatError::NotPsd { index: j, pivot });
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let off = s[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = off / d;
        }
    }
    Ok(l)
}

/// Draws `x ~ N(0, S)`.
pub fn sample_gaussian<R: Rng + ?Sized>(s: &Matrix, rng: &mut R) -> Result<Vector, MatError> {
    let l = psd_cholesky(s)?;
    let z = Vector::from_fn(s.nrows(), |_, _| rng.sample(StandardNormal));
    Ok(l * z)
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().sum()
}
