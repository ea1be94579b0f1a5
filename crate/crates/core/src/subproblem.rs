//! Exact solver for the per-iteration convex QCQP
//!
//! ```text
//! minimize qJ(θ)  subject to  qD(θ) ≤ D0,  θ ∈ box
//! ```
//!
//! and its feasibility relaxation `min α s.t. qD(θ) ≤ D0 + α`.
//!
//! Both quadratics have scaled-identity Hessians, so for a fixed multiplier λ
//! the Lagrangian `qJ + λ qD` separates over coordinates and its box-constrained
//! minimizer is a componentwise clamp. The multiplier is then found by
//! bisection on the monotone map `λ ↦ qD(θ(λ))`.

use crate::mat::Vector;
use crate::quadform::{SeparableQuadratic, CURVATURE_EPS};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const LAMBDA_MAX: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubproblemError {
    #[error("{which} surrogate has curvature {curvature}, too small to solve")]
    ZeroCurvature { which: &'static str, curvature: f64 },
    #[error("no multiplier below {LAMBDA_MAX} brackets the constraint (slack {slack})")]
    BisectionFailure { slack: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty box: lower bound exceeds upper bound at coordinate {0}")]
    EmptyBox(usize),
}

/// Componentwise bounds; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vector,
    pub upper: Vector,
}

impl Bounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, SubproblemError> {
        if lower.len() != upper.len() {
            return Err(SubproblemError::DimensionMismatch { left: lower.len(), right: upper.len() });
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(SubproblemError::EmptyBox(i));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::uniform(dim, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self { lower: Vector::from_element(dim, lower), upper: Vector::from_element(dim, upper) }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, theta: &Vector) -> Vector {
        Vector::from_fn(theta.len(), |i, _| theta[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn contains(&self, theta: &Vector) -> bool {
        theta.iter().enumerate().all(|(i, &x)| x >= self.lower[i] && x <= self.upper[i])
    }

    /// Norm of the projected gradient: components pushing outward against an
    /// active bound are absorbed by the bound multiplier.
    pub fn projected_gradient_norm(&self, theta: &Vector, grad: &Vector) -> f64 {
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                if theta[i] <= self.lower[i] {
                    g.min(0.0)
                } else if theta[i] >= self.upper[i] {
                    g.max(0.0)
                } else {
                    g
                }
            })
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// The objective's box minimizer already satisfies the constraint.
    Interior,
    /// The constraint is active at the solution.
    Boundary,
    /// The surrogate constraint cannot be met; the feasibility problem was solved.
    Relaxed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Interior => "interior",
            SolveStatus::Boundary => "boundary",
            SolveStatus::Relaxed => "relaxed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub theta_bar: Vector,
    /// Multiplier on the constraint surrogate; zero for `Interior` and `Relaxed`.
    pub lambda: f64,
    /// Constraint relaxation; zero unless `Relaxed`.
    pub alpha: f64,
    pub status: SolveStatus,
}

impl SubproblemSolution {
    /// Stationarity residual of the problem that produced this solution:
    /// `qJ + λ qD` for the QCQP, `qD` alone for the relaxation.
    pub fn kkt_residual(&self, qj: &SeparableQuadratic, qd: &SeparableQuadratic, bounds: &Bounds) -> f64 {
        let grad = match self.status {
            SolveStatus::Relaxed => qd.gradient(&self.theta_bar),
            _ => qj.gradient(&self.theta_bar) + qd.gradient(&self.theta_bar) * self.lambda,
        };
        bounds.projected_gradient_norm(&self.theta_bar, &grad)
    }
}

fn check(qj: &SeparableQuadratic, qd: &SeparableQuadratic, bounds: &Bounds) -> Result<(), SubproblemError> {
    if qj.c <= CURVATURE_EPS {
        return Err(SubproblemError::ZeroCurvature { which: "objective", curvature: qj.c });
    }
    if qd.c <= CURVATURE_EPS {
        return Err(SubproblemError::ZeroCurvature { which: "constraint", curvature: qd.c });
    }
    if qj.dim() != qd.dim() {
        return Err(SubproblemError::DimensionMismatch { left: qj.dim(), right: qd.dim() });
    }
    if qj.dim() != bounds.dim() {
        return Err(SubproblemError::DimensionMismatch { left: qj.dim(), right: bounds.dim() });
    }
    Ok(())
}

fn lagrangian_minimizer(qj: &SeparableQuadratic, qd: &SeparableQuadratic, bounds: &Bounds, lambda: f64) -> Vector {
    let curvature = 2.0 * (qj.c + lambda * qd.c);
    let unclamped = (&qj.g + &qd.g * lambda) / (-curvature);
    bounds.clamp(&unclamped)
}

/// `θ(λ)`, the box minimizer of `qJ + λ qD`, and its constraint slack `qD(θ(λ)) - D0`.
pub fn dual_value_curve(
    qj: &SeparableQuadratic,
    qd: &SeparableQuadratic,
    d0: f64,
    bounds: &Bounds,
    lambda: f64,
) -> Result<(Vector, f64), SubproblemError> {
    check(qj, qd, bounds)?;
    let theta = lagrangian_minimizer(qj, qd, bounds, lambda);
    let slack = qd.evaluate(&theta) - d0;
    Ok((theta, slack))
}

/// Solves the surrogate QCQP, falling back to the minimum-relaxation problem
/// when the surrogate constraint set is empty.
pub fn solve(
    qj: &SeparableQuadratic,
    qd: &SeparableQuadratic,
    d0: f64,
    bounds: &Bounds,
    tol: f64,
) -> Result<SubproblemSolution, SubproblemError> {
    check(qj, qd, bounds)?;
    let slack_tol = tol * d0.abs().max(1.0);

    // Minimizing α subject to qD ≤ D0 + α is minimizing qD over the box.
    let d_min = bounds.clamp(&(&qd.g / (-2.0 * qd.c)));
    let d_min_slack = qd.evaluate(&d_min) - d0;
    if d_min_slack > slack_tol {
        return Ok(SubproblemSolution {
            theta_bar: d_min,
            lambda: 0.0,
            alpha: d_min_slack,
            status: SolveStatus::Relaxed,
        });
    }

    let slack_at = |lambda: f64| {
        let theta = lagrangian_minimizer(qj, qd, bounds, lambda);
        let slack = qd.evaluate(&theta) - d0;
        (theta, slack)
    };

    let (theta0, slack0) = slack_at(0.0);
    if slack0 <= slack_tol {
        return Ok(SubproblemSolution { theta_bar: theta0, lambda: 0.0, alpha: 0.0, status: SolveStatus::Interior });
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut theta_hi, mut slack_hi) = slack_at(hi);
    while slack_hi > slack_tol {
        lo = hi;
        hi *= 2.0;
        if hi > LAMBDA_MAX {
            return Err(SubproblemError::BisectionFailure { slack: slack_hi });
        }
        (theta_hi, slack_hi) = slack_at(hi);
    }
    if slack_hi.abs() <= slack_tol {
        return Ok(boundary(theta_hi, hi));
    }

    // Invariant: slack(lo) > slack_tol, slack(hi) < -slack_tol.
    loop {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * hi || mid <= lo || mid >= hi {
            return Ok(boundary(theta_hi, hi));
        }
        let (theta, slack) = slack_at(mid);
        if slack.abs() <= slack_tol {
            return Ok(boundary(theta, mid));
        }
        if slack > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            theta_hi = theta;
        }
    }
}

fn boundary(theta_bar: Vector, lambda: f64) -> SubproblemSolution {
    SubproblemSolution { theta_bar, lambda, alpha: 0.0, status: SolveStatus::Boundary }
}
