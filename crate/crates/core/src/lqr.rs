//! Constrained linear-quadratic regulator environments.
//!
//! Dynamics `x_{t+1} = A x_t + B u_t + v_t` under the linear policy
//! `u_t = -F x_t + w_t`. The objective and constraint are the accumulated
//! quadratic costs with weights `(Q1, R1)` and `(Q2, R2)`. Two randomness
//! settings are supported:
//!
//! - [`NoiseMode::RandomInit`]: `x_0 ~ Uniform[-w, w]^n`, no process noise.
//!   `J(F) = E[x_0ᵀ P_F x_0]`.
//! - [`NoiseMode::NoisyDynamics`]: `v_t, w_t` standard Gaussian.
//!   `J(F) = E_{x~N(0,S_F)}[xᵀ(Q1 + FᵀR1F)x] + tr(R1)`.
//!
//! In both cases `∇J(F) = 2((R1 + BᵀP_F B)F - BᵀP_F A)·Σ` where `Σ` is the
//! (expected) accumulated or stationary state second moment. The gain `F` is
//! flattened row-major into the parameter vector used by the solvers.

use crate::mat::{self, Matrix, MatError, TransposeSide, Vector};
use crate::rng::{self, SimRng};
use crate::sca::{ConstrainedOracle, OracleSample};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Spectral radius the generator scales `A` to.
pub const GENERATED_RADIUS: f64 = 0.9;
/// Fraction of the way from the cost-optimal to the objective-optimal constraint value.
pub const BUDGET_FRACTION: f64 = 0.25;
pub const MAX_GENERATION_ATTEMPTS: usize = 100;
const RICCATI_TOL: f64 = 1e-13;
const RICCATI_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    RandomInit,
    NoisyDynamics,
}

impl NoiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::RandomInit => "random_init",
            NoiseMode::NoisyDynamics => "noisy_dynamics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random_init" => Some(NoiseMode::RandomInit),
            "noisy_dynamics" => Some(NoiseMode::NoisyDynamics),
            _ => None,
        }
    }
}

/// Selects the objective weights `(Q1, R1)` or the constraint weights `(Q2, R2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Objective,
    Constraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub a: Matrix,
    pub b: Matrix,
    pub q1: Matrix,
    pub r1: Matrix,
    pub q2: Matrix,
    pub r2: Matrix,
    pub d0: f64,
    pub mode: NoiseMode,
    pub init_half_width: f64,
    /// Generator seed, when the instance came from [`generate_problem`].
    pub seed: Option<u64>,
}

/// Function values and gradients (as `m×n` matrices) at one gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrEvaluation {
    pub j: f64,
    pub j_grad: Matrix,
    pub d: f64,
    pub d_grad: Matrix,
}

impl LqrEvaluation {
    pub fn into_sample(self) -> OracleSample {
        OracleSample {
            j_value: self.j,
            j_grad: flatten_gain(&self.j_grad),
            d_value: self.d,
            d_grad: flatten_gain(&self.d_grad),
        }
    }
}

/// Row-major flattening of an `m×n` gain.
pub fn flatten_gain(f: &Matrix) -> Vector {
    Vector::from_iterator(f.len(), f.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

pub fn unflatten_gain(theta: &Vector, m: usize, n: usize) -> Result<Matrix> {
    if theta.len() != m * n {
        return Err(Error::DimensionMismatch { expected: m * n, got: theta.len() });
    }
    Ok(Matrix::from_row_slice(m, n, theta.as_slice()))
}

fn is_spd(m: &Matrix) -> bool {
    m.nrows() == m.ncols() && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0) && m.clone().cholesky().is_some()
}

impl LqrProblem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.n() * self.m()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let shape = |name: &str, mat: &Matrix, r: usize, c: usize| {
            if mat.nrows() != r || mat.ncols() != c {
                Err(Error::InvalidProblem(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else if !mat::is_finite(mat) {
                Err(Error::InvalidProblem(format!("{name} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        shape("A", &self.a, n, n)?;
        shape("B", &self.b, n, m)?;
        shape("Q1", &self.q1, n, n)?;
        shape("Q2", &self.q2, n, n)?;
        shape("R1", &self.r1, m, m)?;
        shape("R2", &self.r2, m, m)?;
        for (name, w) in [("Q1", &self.q1), ("Q2", &self.q2), ("R1", &self.r1), ("R2", &self.r2)] {
            if !is_spd(w) {
                return Err(Error::InvalidProblem(format!("{name} is not symmetric positive definite")));
            }
        }
        let radius = mat::spectral_radius(&self.a)?;
        if radius >= 1.0 {
            return Err(Error::InvalidProblem(format!("A has spectral radius {radius} >= 1")));
        }
        if !self.d0.is_finite() {
            return Err(Error::InvalidProblem("D0 must be finite".into()));
        }
        if !(self.init_half_width >= 0.0) {
            return Err(Error::InvalidProblem("init_half_width must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn weights(&self, kind: CostKind) -> (&Matrix, &Matrix) {
        match kind {
            CostKind::Objective => (&self.q1, &self.r1),
            CostKind::Constraint => (&self.q2, &self.r2),
        }
    }

    pub fn closed_loop(&self, f: &Matrix) -> Matrix {
        &self.a - &self.b * f
    }

    fn check_gain(&self, f: &Matrix) -> Result<()> {
        if f.nrows() != self.m() || f.ncols() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: f.len() });
        }
        Ok(())
    }

    /// `P_F = Q + FᵀRF + (A - BF)ᵀ P_F (A - BF)`.
    pub fn p_matrix(&self, f: &Matrix, kind: CostKind) -> Result<Matrix> {
        self.check_gain(f)?;
        let (q, r) = self.weights(kind);
        let c = q + f.transpose() * r * f;
        Ok(mat::fixed_point_quadratic(
            &self.closed_loop(f),
            &c,
            TransposeSide::Left,
            mat::DEFAULT_TOL,
            mat::DEFAULT_MAX_ITER,
        )?)
    }

    /// `E[x_0 x_0ᵀ] = (w²/3) I` for the uniform cube.
    pub fn initial_second_moment(&self) -> Matrix {
        let w = self.init_half_width;
        Matrix::identity(self.n(), self.n()) * (w * w / 3.0)
    }

    /// `I + BBᵀ`, the per-step state noise covariance of the noisy setting.
    pub fn process_noise_covariance(&self) -> Matrix {
        Matrix::identity(self.n(), self.n()) + &self.b * self.b.transpose()
    }

    /// `S = C + (A - BF) S (A - BF)ᵀ` for a given source term `C`.
    pub fn state_moment(&self, f: &Matrix, source: &Matrix) -> Result<Matrix> {
        self.check_gain(f)?;
        Ok(mat::fixed_point_quadratic(
            &self.closed_loop(f),
            source,
            TransposeSide::Right,
            mat::DEFAULT_TOL,
            mat::DEFAULT_MAX_ITER,
        )?)
    }

    /// Expected second moment driving the gradient: the accumulated
    /// `E Σ x_t x_tᵀ` (random init) or the stationary covariance (noisy).
    pub fn expected_state_moment(&self, f: &Matrix) -> Result<Matrix> {
        let source = match self.mode {
            NoiseMode::RandomInit => self.initial_second_moment(),
            NoiseMode::NoisyDynamics => self.process_noise_covariance(),
        };
        self.state_moment(f, &source)
    }

    /// `(R + BᵀPB)F - BᵀPA`, zero exactly at the Riccati gain.
    pub fn gain_residual(&self, f: &Matrix, p: &Matrix, kind: CostKind) -> Matrix {
        let (_, r) = self.weights(kind);
        let btp = self.b.transpose() * p;
        (r + &btp * &self.b) * f - btp * &self.a
    }

    /// Exact objective and constraint values.
    pub fn exact_objective(&self, f: &Matrix) -> Result<(f64, f64)> {
        let eval = |kind| -> Result<f64> {
            let p = self.p_matrix(f, kind)?;
            Ok(match self.mode {
                NoiseMode::RandomInit => mat::trace(&(p * self.initial_second_moment())),
                NoiseMode::NoisyDynamics => {
                    let (_, r) = self.weights(kind);
                    mat::trace(&(p * self.process_noise_covariance())) + mat::trace(r)
                }
            })
        };
        Ok((eval(CostKind::Objective)?, eval(CostKind::Constraint)?))
    }

    /// Exact values and gradients.
    pub fn exact_evaluation(&self, f: &Matrix) -> Result<LqrEvaluation> {
        let (j, d) = self.exact_objective(f)?;
        let sigma = self.expected_state_moment(f)?;
        let p1 = self.p_matrix(f, CostKind::Objective)?;
        let p2 = self.p_matrix(f, CostKind::Constraint)?;
        Ok(LqrEvaluation {
            j,
            j_grad: self.gain_residual(f, &p1, CostKind::Objective) * &sigma * 2.0,
            d,
            d_grad: self.gain_residual(f, &p2, CostKind::Constraint) * &sigma * 2.0,
        })
    }

    /// One realization for the random-initial-state setting.
    ///
    /// Draws `x_0`, then `J* = x_0ᵀP_F x_0` and `∇J* = 2((R+BᵀPB)F - BᵀPA)·S_F`
    /// with `S_F = x_0x_0ᵀ + (A-BF)S_F(A-BF)ᵀ`. The constraint sample reuses
    /// the same `x_0`.
    pub fn sample_random_init<R: Rng + ?Sized>(&self, f: &Matrix, rng: &mut R) -> Result<LqrEvaluation> {
        self.check_gain(f)?;
        let w = self.init_half_width;
        let x0 = Vector::from_fn(self.n(), |_, _| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 });
        let p1 = self.p_matrix(f, CostKind::Objective)?;
        let p2 = self.p_matrix(f, CostKind::Constraint)?;
        let s = self.state_moment(f, &(&x0 * x0.transpose()))?;
        Ok(LqrEvaluation {
            j: (x0.transpose() * &p1 * &x0)[(0, 0)],
            j_grad: self.gain_residual(f, &p1, CostKind::Objective) * &s * 2.0,
            d: (x0.transpose() * &p2 * &x0)[(0, 0)],
            d_grad: self.gain_residual(f, &p2, CostKind::Constraint) * &s * 2.0,
        })
    }

    /// One realization for the noisy-dynamics setting: `x ~ N(0, S_F)`, then
    /// `J* = xᵀ(Q1 + FᵀR1F)x + tr(R1)` and `∇J* = 2((R1+BᵀP_F B)F - BᵀP_F A)·xxᵀ`.
    pub fn sample_noisy<R: Rng + ?Sized>(&self, f: &Matrix, rng: &mut R) -> Result<LqrEvaluation> {
        let s = self.state_moment(f, &self.process_noise_covariance())?;
        let x = mat::sample_gaussian(&s, rng)?;
        let xx = &x * x.transpose();
        let value = |kind| {
            let (q, r) = self.weights(kind);
            let stage = q + f.transpose() * r * f;
            (x.transpose() * stage * &x)[(0, 0)] + mat::trace(r)
        };
        let p1 = self.p_matrix(f, CostKind::Objective)?;
        let p2 = self.p_matrix(f, CostKind::Constraint)?;
        Ok(LqrEvaluation {
            j: value(CostKind::Objective),
            j_grad: self.gain_residual(f, &p1, CostKind::Objective) * &xx * 2.0,
            d: value(CostKind::Constraint),
            d_grad: self.gain_residual(f, &p2, CostKind::Constraint) * &xx * 2.0,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, f: &Matrix, rng: &mut R) -> Result<LqrEvaluation> {
        match self.mode {
            NoiseMode::RandomInit => self.sample_random_init(f, rng),
            NoiseMode::NoisyDynamics => self.sample_noisy(f, rng),
        }
    }

    /// Optimal unconstrained gain for the chosen weights, from the discrete
    /// Riccati recursion `P ← Q + AᵀPA - AᵀPB(R + BᵀPB)⁻¹BᵀPA` started at `Q`.
    pub fn riccati_gain(&self, kind: CostKind) -> Result<Matrix> {
        let (q, r) = self.weights(kind);
        let (a, b) = (&self.a, &self.b);
        let gain = |p: &Matrix| -> Result<Matrix> {
            let btp = b.transpose() * p;
            let lhs = r + &btp * b;
            let chol = lhs
                .cholesky()
                .ok_or(Error::InvalidProblem("R + BᵀPB is not positive definite".into()))?;
            Ok(chol.solve(&(btp * a)))
        };
        let mut p = q.clone();
        for _ in 0..RICCATI_MAX_ITER {
            let f = gain(&p)?;
            let next = mat::symmetrize(&(q + a.transpose() * &p * a - a.transpose() * &p * b * &f));
            let change = mat::inf_norm(&(&next - &p));
            p = next;
            if change <= RICCATI_TOL * mat::inf_norm(&p).max(1.0) {
                let f = gain(&p)?;
                let radius = mat::spectral_radius(&self.closed_loop(&f))?;
                if radius >= 1.0 {
                    return Err(MatError::NotContractive { radius }.into());
                }
                return Ok(f);
            }
        }
        Err(MatError::NoConvergence { what: "Riccati recursion", iterations: RICCATI_MAX_ITER }.into())
    }

    /// Objective value of the unconstrained optimum, the floor for any gain.
    pub fn unconstrained_minimum(&self) -> Result<f64> {
        let f = self.riccati_gain(CostKind::Objective)?;
        Ok(self.exact_objective(&f)?.0)
    }

    /// Checks the three instance conditions: the constrained problem is
    /// feasible, the unconstrained optimum violates the constraint, and the
    /// zero gain is infeasible.
    pub fn check_conditions(&self) -> Result<InstanceReport> {
        let f_star = self.riccati_gain(CostKind::Objective)?;
        let f_cost = self.riccati_gain(CostKind::Constraint)?;
        let zero = Matrix::zeros(self.m(), self.n());
        let (j_star, d_star) = self.exact_objective(&f_star)?;
        let (_, d_min) = self.exact_objective(&f_cost)?;
        let (_, d_zero) = self.exact_objective(&zero)?;
        Ok(InstanceReport { d0: self.d0, j_unconstrained: j_star, d_at_unconstrained: d_star, d_min, d_zero })
    }
}

/// Constraint values at the reference gains of an instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceReport {
    pub d0: f64,
    pub j_unconstrained: f64,
    pub d_at_unconstrained: f64,
    /// Smallest achievable constraint value.
    pub d_min: f64,
    pub d_zero: f64,
}

impl InstanceReport {
    pub fn feasible(&self) -> bool {
        self.d_min < self.d0
    }

    pub fn nontrivial(&self) -> bool {
        self.d_at_unconstrained > self.d0
    }

    pub fn zero_gain_infeasible(&self) -> bool {
        self.d_zero > self.d0
    }

    pub fn all_hold(&self) -> bool {
        self.feasible() && self.nontrivial() && self.zero_gain_infeasible()
    }
}

fn standard_normal_matrix(rng: &mut SimRng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_pd(rng: &mut SimRng, n: usize) -> Matrix {
    let g = standard_normal_matrix(rng, n, n);
    mat::symmetrize(&(&g * g.transpose() + Matrix::identity(n, n)))
}

/// Draws a constrained LQR instance.
///
/// `A` and `B` have standard normal entries with `A` rescaled to spectral
/// radius 0.9; `Q1 = I`, `R1 = I`; `Q2`, `R2` are `GGᵀ + I`. The budget is
/// placed a quarter of the way from the smallest achievable constraint value
/// to the constraint value of the unconstrained optimum. Draws are repeated
/// until the zero gain is infeasible.
pub fn generate_problem(n: usize, m: usize, seed: u64, mode: NoiseMode) -> Result<LqrProblem> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig("state and input dimensions must be positive".into()));
    }
    let mut rng = rng::stream(seed, 0);
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let a = standard_normal_matrix(&mut rng, n, n);
        let b = standard_normal_matrix(&mut rng, n, m);
        let q2 = random_pd(&mut rng, n);
        let r2 = random_pd(&mut rng, m);
        let radius = mat::spectral_radius(&a)?;
        if radius <= 1e-12 {
            continue;
        }
        let mut problem = LqrProblem {
            a: a * (GENERATED_RADIUS / radius),
            b,
            q1: Matrix::identity(n, n),
            r1: Matrix::identity(m, m),
            q2,
            r2,
            d0: 0.0,
            mode,
            init_half_width: 1.0,
            seed: Some(seed),
        };
        let Ok(mut report) = problem.check_conditions() else { continue };
        problem.d0 = report.d_min + BUDGET_FRACTION * (report.d_at_unconstrained - report.d_min);
        report.d0 = problem.d0;
        if report.all_hold() {
            return Ok(problem);
        }
    }
    Err(Error::GenerationFailed { attempts: MAX_GENERATION_ATTEMPTS })
}

/// How [`LqrOracle`] produces its samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LqrOracleKind {
    /// Plug-in sampling for the problem's randomness setting.
    Sampled,
    /// Exact values and gradients plus i.i.d. `N(0, noise_std²)` perturbations.
    Exact { noise_std: f64 },
}

/// Adapts an [`LqrProblem`] to the solver's oracle interface over flattened gains.
#[derive(Debug, Clone)]
pub struct LqrOracle {
    pub problem: LqrProblem,
    pub kind: LqrOracleKind,
}

impl LqrOracle {
    pub fn new(problem: LqrProblem, kind: LqrOracleKind) -> Self {
        Self { problem, kind }
    }

    pub fn gain(&self, theta: &Vector) -> Result<Matrix> {
        unflatten_gain(theta, self.problem.m(), self.problem.n())
    }
}

impl ConstrainedOracle for LqrOracle {
    fn dim(&self) -> usize {
        self.problem.param_dim()
    }

    fn budget(&self) -> f64 {
        self.problem.d0
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<OracleSample> {
        let f = self.gain(theta)?;
        match self.kind {
            LqrOracleKind::Sampled => Ok(self.problem.sample(&f, rng)?.into_sample()),
            LqrOracleKind::Exact { noise_std } => {
                let mut s = self.problem.exact_evaluation(&f)?.into_sample();
                if noise_std > 0.0 {
                    let mut noise = || noise_std * rng.sample::<f64, _>(StandardNormal);
                    s.j_value += noise();
                    s.j_grad.iter_mut().for_each(|x| *x += noise());
                    s.d_value += noise();
                    s.d_grad.iter_mut().for_each(|x| *x += noise());
                }
                Ok(s)
            }
        }
    }

    fn exact(&self, theta: &Vector) -> Option<Result<(f64, f64)>> {
        Some(self.gain(theta).and_then(|f| self.problem.exact_objective(&f)))
    }
}
