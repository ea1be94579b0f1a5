//! Quadratics with scaled-identity curvature and their running averages.
//!
//! Every surrogate is stored expanded as `q(θ) = a + gᵀθ + c‖θ‖²`. Because all
//! terms share the `‖θ‖²` structure, a convex combination of two surrogates is
//! again of this form and the recursive average reduces to coefficient
//! arithmetic.

use crate::mat::Vector;
use thiserror::Error;

/// Curvatures at or below this are treated as zero.
pub const CURVATURE_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("mixing weight {0} outside [0, 1]")]
    RhoOutOfRange(f64),
    #[error("curvature {0} is too small for a unique minimizer")]
    ZeroCurvature(f64),
    #[error("proximal weight must be positive, got {0}")]
    NonPositiveTau(f64),
}

fn check_dims(left: usize, right: usize) -> Result<(), QuadError> {
    if left != right {
        return Err(QuadError::DimensionMismatch { left, right });
    }
    Ok(())
}

/// `q(θ) = a + gᵀθ + c‖θ‖²` with `c ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQuadratic {
    pub a: f64,
    pub g: Vector,
    pub c: f64,
}

impl SeparableQuadratic {
    pub fn zero(dim: usize) -> Self {
        Self { a: 0.0, g: Vector::zeros(dim), c: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Expands `value + ⟨grad, θ - center⟩ + τ‖θ - center‖²`.
    pub fn from_sample(value: f64, grad: &Vector, center: &Vector, tau: f64) -> Result<Self, QuadError> {
        check_dims(grad.len(), center.len())?;
        if !(tau > 0.0) {
            return Err(QuadError::NonPositiveTau(tau));
        }
        let g = grad - center * (2.0 * tau);
        let a = value - grad.dot(center) + tau * center.norm_squared();
        Ok(Self { a, g, c: tau })
    }

    /// `(1 - ρ)·prev + ρ·new`, coefficientwise.
    pub fn mix(prev: &Self, new: &Self, rho: f64) -> Result<Self, QuadError> {
        check_dims(prev.dim(), new.dim())?;
        if !(0.0..=1.0).contains(&rho) {
            return Err(QuadError::RhoOutOfRange(rho));
        }
        if rho == 1.0 {
            return Ok(new.clone());
        }
        if rho == 0.0 {
            return Ok(prev.clone());
        }
        let keep = 1.0 - rho;
        Ok(Self {
            a: keep * prev.a + rho * new.a,
            g: &prev.g * keep + &new.g * rho,
            c: keep * prev.c + rho * new.c,
        })
    }

    pub fn evaluate(&self, theta: &Vector) -> f64 {
        self.a + self.g.dot(theta) + self.c * theta.norm_squared()
    }

    pub fn gradient(&self, theta: &Vector) -> Vector {
        &self.g + theta * (2.0 * self.c)
    }

    /// `-g / (2c)`.
    pub fn unconstrained_minimizer(&self) -> Result<Vector, QuadError> {
        if self.c <= CURVATURE_EPS {
            return Err(QuadError::ZeroCurvature(self.c));
        }
        Ok(&self.g / (-2.0 * self.c))
    }

    /// `a - ‖g‖² / (4c)`.
    pub fn minimum_value(&self) -> Result<f64, QuadError> {
        if self.c <= CURVATURE_EPS {
            return Err(QuadError::ZeroCurvature(self.c));
        }
        Ok(self.a - self.g.norm_squared() / (4.0 * self.c))
    }
}

/// Running-average objective and constraint surrogates.
///
/// Both members start identically zero; each [`SurrogatePair::update`] folds
/// in one new pair of samples with weight `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogatePair {
    pub j_bar: SeparableQuadratic,
    pub d_bar: SeparableQuadratic,
    pub tau: f64,
    pub k: usize,
}

impl SurrogatePair {
    pub fn new(dim: usize, tau: f64) -> Result<Self, QuadError> {
        if !(tau > 0.0) {
            return Err(QuadError::NonPositiveTau(tau));
        }
        Ok(Self {
            j_bar: SeparableQuadratic::zero(dim),
            d_bar: SeparableQuadratic::zero(dim),
            tau,
            k: 0,
        })
    }

    /// Builds the two sample surrogates at `center` and mixes them in.
    pub fn update(
        &mut self,
        j_value: f64,
        j_grad: &Vector,
        d_value: f64,
        d_grad: &Vector,
        center: &Vector,
        rho: f64,
    ) -> Result<(), QuadError> {
        check_dims(self.j_bar.dim(), center.len())?;
        check_dims(d_grad.len(), center.len())?;
        let j_new = SeparableQuadratic::from_sample(j_value, j_grad, center, self.tau)?;
        let d_new = SeparableQuadratic::from_sample(d_value, d_grad, center, self.tau)?;
        self.j_bar = SeparableQuadratic::mix(&self.j_bar, &j_new, rho)?;
        self.d_bar = SeparableQuadratic::mix(&self.d_bar, &d_new, rho)?;
        self.k += 1;
        Ok(())
    }
}
