//! The successive convex relaxation loop.
//!
//! Each iteration draws one (or `n_traj` averaged) stochastic first-order
//! samples at the current iterate, folds them into the running surrogates
//! with weight `ρₖ`, solves the surrogate QCQP (or its feasibility
//! relaxation) and moves `θₖ₊₁ = (1 - ηₖ)θₖ + ηₖθ̄ₖ`.

use crate::mat::Vector;
use crate::quadform::SurrogatePair;
use crate::rng::{self, SimRng};
use crate::subproblem::{self, Bounds, SolveStatus, SubproblemSolution};
use crate::{Error, Result};

/// Default half-width of the parameter box when none is configured.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaConfig {
    /// Proximal weight of the sample surrogates.
    pub tau: f64,
    pub eta_coeff: f64,
    pub eta_exp: f64,
    pub rho_coeff: f64,
    pub rho_exp: f64,
    pub max_iter: usize,
    /// Parameter box; `None` means `[-1e3, 1e3]^d`.
    pub bounds: Option<Bounds>,
    pub seed: u64,
    /// A logged iterate counts as feasible when `D ≤ D0 + feas_tol`.
    pub feas_tol: f64,
    /// Oracle samples averaged per iteration.
    pub n_traj: usize,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub subproblem_tol: f64,
}

impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            eta_coeff: 2.0 / 3.0,
            eta_exp: 0.75,
            rho_coeff: 2.0 / 3.0,
            rho_exp: 2.0 / 3.0,
            max_iter: 1000,
            bounds: None,
            seed: 0,
            feas_tol: 0.0,
            n_traj: 1,
            stall_tol: 1e-10,
            stall_window: 50,
            subproblem_tol: subproblem::DEFAULT_TOL,
        }
    }
}

impl ScaConfig {
    /// Checks the step-size schedule and the remaining scalar settings.
    ///
    /// The schedules `ηₖ = c_η k^{-e_η}`, `ρₖ = c_ρ k^{-e_ρ}` must satisfy
    /// `0.5 < e_ρ < e_η < 1` (square-summable, non-summable, `ηₖ/ρₖ → 0`),
    /// and `η₁ ≤ ρ₁ ≤ 1` so every update is a convex combination.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.5 < self.rho_exp && self.rho_exp < self.eta_exp && self.eta_exp < 1.0) {
            return bad(format!(
                "step exponents must satisfy 0.5 < rho_exp < eta_exp < 1, got rho_exp={} eta_exp={}",
                self.rho_exp, self.eta_exp
            ));
        }
        if !(self.eta_coeff > 0.0 && self.eta_coeff <= 1.0) {
            return bad(format!("eta_coeff must lie in (0, 1], got {}", self.eta_coeff));
        }
        if !(self.rho_coeff > 0.0 && self.rho_coeff <= 1.0) {
            return bad(format!("rho_coeff must lie in (0, 1], got {}", self.rho_coeff));
        }
        if self.eta_coeff > self.rho_coeff {
            return bad(format!("eta_coeff {} exceeds rho_coeff {}", self.eta_coeff, self.rho_coeff));
        }
        if self.n_traj == 0 {
            return bad("n_traj must be at least 1".into());
        }
        if !(self.feas_tol >= 0.0) || !(self.stall_tol >= 0.0) || !(self.subproblem_tol > 0.0) {
            return bad("tolerances must be nonnegative (subproblem_tol positive)".into());
        }
        if self.stall_window == 0 {
            return bad("stall_window must be at least 1".into());
        }
        Ok(())
    }

    pub fn bounds_for(&self, dim: usize) -> Result<Bounds> {
        match &self.bounds {
            Some(b) if b.dim() != dim => Err(Error::DimensionMismatch { expected: dim, got: b.dim() }),
            Some(b) => Ok(b.clone()),
            None => Ok(Bounds::uniform(dim, -DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta: f64,
    pub rho: f64,
}

/// `(ηₖ, ρₖ)` for iteration `k ≥ 1`.
pub fn step_sizes(k: usize, cfg: &ScaConfig) -> StepSizes {
    debug_assert!(k >= 1);
    let k = k as f64;
    StepSizes { eta: cfg.eta_coeff * k.powf(-cfg.eta_exp), rho: cfg.rho_coeff * k.powf(-cfg.rho_exp) }
}

/// One stochastic realization of the objective and constraint at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub j_value: f64,
    pub j_grad: Vector,
    pub d_value: f64,
    pub d_grad: Vector,
}

impl OracleSample {
    pub fn check(&self, dim: usize) -> Result<()> {
        for len in [self.j_grad.len(), self.d_grad.len()] {
            if len != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: len });
            }
        }
        let finite = self.j_value.is_finite()
            && self.d_value.is_finite()
            && self.j_grad.iter().chain(self.d_grad.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidProblem("oracle returned a non-finite sample".into()));
        }
        Ok(())
    }

    /// Arithmetic mean, accumulated in slice order.
    pub fn mean(samples: &[OracleSample]) -> OracleSample {
        assert!(!samples.is_empty(), "mean of no samples");
        let mut acc = samples[0].clone();
        for s in &samples[1..] {
            acc.j_value += s.j_value;
            acc.j_grad += &s.j_grad;
            acc.d_value += s.d_value;
            acc.d_grad += &s.d_grad;
        }
        let n = samples.len() as f64;
        if samples.len() > 1 {
            acc.j_value /= n;
            acc.j_grad /= n;
            acc.d_value /= n;
            acc.d_grad /= n;
        }
        acc
    }
}

/// Stochastic first-order oracle for `min J(θ) s.t. D(θ) ≤ D0`.
pub trait ConstrainedOracle {
    fn dim(&self) -> usize;

    /// The constraint budget `D0`.
    fn budget(&self) -> f64;

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<OracleSample>;

    /// Exact `(J(θ), D(θ))` when the environment admits it; used only for logging.
    fn exact(&self, _theta: &Vector) -> Option<Result<(f64, f64)>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub theta: Vector,
    /// Curvature of the averaged objective surrogate after this iteration's update.
    pub j_curvature: f64,
    pub j: f64,
    pub d: f64,
    /// Whether `j`/`d` come from the sample rather than an exact evaluator.
    pub estimated: bool,
    pub feasible: bool,
    pub alpha: f64,
    pub lambda: f64,
    pub status: SolveStatus,
    pub eta: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterateLog {
    pub d0: f64,
    pub records: Vec<IterateRecord>,
    /// Iterate after the last recorded update.
    pub final_theta: Vector,
}

impl IterateLog {
    pub fn relaxation_count(&self) -> usize {
        self.records.iter().filter(|r| r.status == SolveStatus::Relaxed).count()
    }

    pub fn ever_feasible(&self) -> bool {
        self.records.iter().any(|r| r.feasible)
    }
}

/// A run that stopped early; `log` holds every completed iteration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("run aborted after {} iterations: {source}", log.records.len())]
pub struct Aborted {
    pub log: IterateLog,
    pub source: Error,
}

/// What one surrogate update and subproblem solve produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub solution: SubproblemSolution,
    pub step: StepSizes,
    pub next_theta: Vector,
}

/// The surrogate state and iterate of a single run, advanced one sample at a time.
///
/// Shared by the batch loop ([`run`]), the online actor-critic loop and the
/// per-agent decomposition so all three perform identical arithmetic.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub cfg: ScaConfig,
    pub d0: f64,
    pub bounds: Bounds,
    pub surrogates: SurrogatePair,
    pub theta: Vector,
}

impl Stepper {
    pub fn new(cfg: ScaConfig, d0: f64, theta0: Vector) -> Result<Self> {
        cfg.validate()?;
        let bounds = cfg.bounds_for(theta0.len())?;
        if !bounds.contains(&theta0) {
            return Err(Error::InvalidConfig("initial point lies outside the parameter box".into()));
        }
        let surrogates = SurrogatePair::new(theta0.len(), cfg.tau)?;
        Ok(Self { cfg, d0, bounds, surrogates, theta: theta0 })
    }

    /// Index of the next iteration (1-based).
    pub fn next_k(&self) -> usize {
        self.surrogates.k + 1
    }

    /// Folds `sample` (taken at the current iterate) into the surrogates,
    /// solves the subproblem and moves the iterate.
    pub fn advance(&mut self, sample: &OracleSample) -> Result<StepOutcome> {
        sample.check(self.theta.len())?;
        let step = step_sizes(self.next_k(), &self.cfg);
        self.surrogates.update(
            sample.j_value,
            &sample.j_grad,
            sample.d_value,
            &sample.d_grad,
            &self.theta,
            step.rho,
        )?;
        let solution = subproblem::solve(
            &self.surrogates.j_bar,
            &self.surrogates.d_bar,
            self.d0,
            &self.bounds,
            self.cfg.subproblem_tol,
        )?;
        let next_theta = &self.theta * (1.0 - step.eta) + &solution.theta_bar * step.eta;
        // Convex combination of box points; clamp away rounding at the faces.
        let next_theta = self.bounds.clamp(&next_theta);
        self.theta = next_theta.clone();
        Ok(StepOutcome { solution, step, next_theta })
    }
}

fn draw<O: ConstrainedOracle>(oracle: &mut O, theta: &Vector, n: usize, rng: &mut SimRng) -> Result<OracleSample> {
    if n == 1 {
        return oracle.sample(theta, rng);
    }
    let samples = (0..n).map(|_| oracle.sample(theta, rng)).collect::<Result<Vec<_>>>()?;
    Ok(OracleSample::mean(&samples))
}

/// Runs the successive convex relaxation loop from `theta0`.
///
/// Terminates after `max_iter` iterations or once the iterate has moved less
/// than `stall_tol` for `stall_window` consecutive iterations.
pub fn run<O: ConstrainedOracle>(oracle: &mut O, cfg: &ScaConfig, theta0: &Vector) -> Result<IterateLog, Aborted> {
    let mut log = IterateLog { d0: oracle.budget(), records: Vec::new(), final_theta: theta0.clone() };
    let abort = |log: IterateLog, source: Error| Aborted { log, source };

    if theta0.len() != oracle.dim() {
        let e = Error::DimensionMismatch { expected: oracle.dim(), got: theta0.len() };
        return Err(abort(log, e));
    }
    let mut stepper = match Stepper::new(cfg.clone(), oracle.budget(), theta0.clone()) {
        Ok(s) => s,
        Err(e) => return Err(abort(log, e)),
    };
    let mut rng = rng::stream(cfg.seed, 0);
    let mut still = 0usize;

    for k in 1..=cfg.max_iter {
        let theta = stepper.theta.clone();
        let result = (|| {
            let sample = draw(oracle, &theta, cfg.n_traj, &mut rng)?;
            let (j, d, estimated) = match oracle.exact(&theta) {
                Some(exact) => {
                    let (j, d) = exact?;
                    (j, d, false)
                }
                None => (sample.j_value, sample.d_value, true),
            };
            let outcome = stepper.advance(&sample)?;
            Ok::<_, Error>((j, d, estimated, outcome))
        })();
        let (j, d, estimated, outcome) = match result {
            Ok(r) => r,
            Err(e) => return Err(abort(log, e)),
        };
        let moved = (&outcome.next_theta - &theta).norm();
        log.records.push(IterateRecord {
            k,
            theta,
            j_curvature: stepper.surrogates.j_bar.c,
            j,
            d,
            estimated,
            feasible: d <= log.d0 + cfg.feas_tol,
            alpha: outcome.solution.alpha,
            lambda: outcome.solution.lambda,
            status: outcome.solution.status,
            eta: outcome.step.eta,
            rho: outcome.step.rho,
        });
        log.final_theta = outcome.next_theta;
        still = if moved <= cfg.stall_tol { still + 1 } else { 0 };
        if still >= cfg.stall_window {
            break;
        }
    }
    Ok(log)
}

/// Stationarity diagnostic at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub residual: f64,
    pub lambda: f64,
}

/// `min_{λ ≥ 0} ‖∇J + λ∇D‖` subject to `λ·(D - D0) = 0`.
///
/// The constraint counts as active when `|D - D0| ≤ active_tol`; otherwise
/// complementary slackness forces `λ = 0`.
pub fn kkt_residual(grad_j: &Vector, grad_d: &Vector, d_value: f64, d0: f64, active_tol: f64) -> KktResidual {
    let active = (d_value - d0).abs() <= active_tol;
    let dd = grad_d.norm_squared();
    let lambda = if active && dd > 0.0 { (-grad_j.dot(grad_d) / dd).max(0.0) } else { 0.0 };
    KktResidual { residual: (grad_j + grad_d * lambda).norm(), lambda }
}
