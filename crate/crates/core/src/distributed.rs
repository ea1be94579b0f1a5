//! Multi-worker variants, simulated in one process.
//!
//! [`ParallelOracle`] is the central-controller scheme: every worker samples
//! its own estimate at the broadcast iterate and the controller averages
//! them in worker order. [`run`] is the transition-independent multi-agent
//! scheme: the objective is shared, each agent owns a slice `θⁱ` of the
//! parameters and a private constraint `Dⁱ(θⁱ) ≤ Dⁱ₀`, and every agent solves
//! its own surrogate problem built from `J/N` and its block of `∇J`.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::mat::Vector;
use crate::quadform::SeparableQuadratic;
use crate::rng::{self, SimRng};
use crate::sca::{ConstrainedOracle, KktResidual, OracleSample, ScaConfig, StepOutcome, Stepper};
use crate::subproblem::{Bounds, SolveStatus};
use crate::{Error, Result};

fn agent_error(agent: usize, source: Error) -> Error {
    Error::Agent { agent, source: Box::new(source) }
}

/// `N` workers with private random streams behind one oracle interface.
///
/// Worker 0 draws from the generator handed to [`ConstrainedOracle::sample`];
/// worker `i ≥ 1` owns stream `i` of `seed`. A single-worker pool is
/// therefore indistinguishable from its worker.
#[derive(Debug, Clone)]
pub struct ParallelOracle<O> {
    pub workers: Vec<O>,
    rngs: Vec<SimRng>,
}

impl<O: ConstrainedOracle + Send> ParallelOracle<O> {
    pub fn new(workers: Vec<O>, seed: u64) -> Result<Self> {
        let Some(first) = workers.first() else {
            return Err(Error::InvalidConfig("a worker pool needs at least one worker".into()));
        };
        let (dim, budget) = (first.dim(), first.budget());
        for w in &workers {
            if w.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: w.dim() });
            }
            if w.budget() != budget {
                return Err(Error::InvalidConfig("workers disagree on the constraint budget".into()));
            }
        }
        let rngs = (1..workers.len() as u64).map(|i| rng::stream(seed, i)).collect();
        Ok(Self { workers, rngs })
    }

    /// `n` clones of one worker.
    pub fn replicate(worker: O, n: usize, seed: u64) -> Result<Self>
    where
        O: Clone,
    {
        Self::new(vec![worker; n], seed)
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }
}

/// Broadcasts `theta`, gathers one sample per worker and averages them in worker order.
pub fn parallel_aggregate<O: ConstrainedOracle + Send>(
    pool: &mut ParallelOracle<O>,
    theta: &Vector,
    rng: &mut SimRng,
) -> Result<OracleSample> {
    let (first, rest) = pool.workers.split_first_mut().expect("pool is nonempty");
    let first_sample = first.sample(theta, rng).map_err(|e| agent_error(0, e))?;
    let rest_samples: Vec<OracleSample> = rest
        .par_iter_mut()
        .zip(pool.rngs.par_iter_mut())
        .enumerate()
        .map(|(i, (w, r))| w.sample(theta, r).map_err(|e| agent_error(i + 1, e)))
        .collect::<Result<_>>()?;
    let mut all = Vec::with_capacity(rest_samples.len() + 1);
    all.push(first_sample);
    all.extend(rest_samples);
    Ok(OracleSample::mean(&all))
}

impl<O: ConstrainedOracle + Send> ConstrainedOracle for ParallelOracle<O> {
    fn dim(&self) -> usize {
        self.workers[0].dim()
    }

    fn budget(&self) -> f64 {
        self.workers[0].budget()
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<OracleSample> {
        parallel_aggregate(self, theta, rng)
    }

    fn exact(&self, theta: &Vector) -> Option<Result<(f64, f64)>> {
        self.workers[0].exact(theta)
    }
}

/// Agent `index` owns `θ[offset .. offset + len]` and the budget `d0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBlock {
    pub index: usize,
    pub offset: usize,
    pub len: usize,
    pub d0: f64,
}

impl AgentBlock {
    pub fn slice(&self, theta: &Vector) -> Vector {
        theta.rows(self.offset, self.len).into_owned()
    }
}

/// Consecutive blocks of the given sizes, in agent order.
pub fn contiguous_blocks(sizes: &[usize], budgets: &[f64]) -> Result<Vec<AgentBlock>> {
    if sizes.len() != budgets.len() {
        return Err(Error::DimensionMismatch { expected: sizes.len(), got: budgets.len() });
    }
    let mut offset = 0;
    let mut blocks = Vec::with_capacity(sizes.len());
    for (index, (&len, &d0)) in sizes.iter().zip(budgets).enumerate() {
        if len == 0 {
            return Err(Error::InvalidConfig(format!("agent {index} has an empty parameter block")));
        }
        blocks.push(AgentBlock { index, offset, len, d0 });
        offset += len;
    }
    Ok(blocks)
}

fn check_blocks(blocks: &[AgentBlock], dim: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("at least one agent is required".into()));
    }
    let mut offset = 0;
    for (i, b) in blocks.iter().enumerate() {
        if b.index != i || b.offset != offset || b.len == 0 {
            return Err(Error::InvalidConfig("agent blocks must tile the parameter vector in order".into()));
        }
        offset += b.len;
    }
    if offset != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: offset });
    }
    Ok(())
}

/// Shared objective with its global gradient; one constraint per agent with
/// the gradient taken with respect to that agent's block only.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentSample {
    pub j_value: f64,
    pub j_grad: Vector,
    pub d_values: Vec<f64>,
    pub d_grads: Vec<Vector>,
}

pub trait MultiAgentOracle {
    fn blocks(&self) -> &[AgentBlock];

    fn dim(&self) -> usize {
        self.blocks().iter().map(|b| b.len).sum()
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<MultiAgentSample>;

    /// Exact `(J, [Dⁱ])` for logging.
    fn exact(&self, _theta: &Vector) -> Option<Result<(f64, Vec<f64>)>> {
        None
    }
}

/// A single-constraint oracle viewed as a one-agent system.
#[derive(Debug, Clone)]
pub struct SingleAgent<O> {
    pub oracle: O,
    blocks: Vec<AgentBlock>,
}

impl<O: ConstrainedOracle> SingleAgent<O> {
    pub fn new(oracle: O) -> Self {
        let blocks = vec![AgentBlock { index: 0, offset: 0, len: oracle.dim(), d0: oracle.budget() }];
        Self { oracle, blocks }
    }
}

impl<O: ConstrainedOracle> MultiAgentOracle for SingleAgent<O> {
    fn blocks(&self) -> &[AgentBlock] {
        &self.blocks
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<MultiAgentSample> {
        let s = self.oracle.sample(theta, rng)?;
        Ok(MultiAgentSample { j_value: s.j_value, j_grad: s.j_grad, d_values: vec![s.d_value], d_grads: vec![s.d_grad] })
    }

    fn exact(&self, theta: &Vector) -> Option<Result<(f64, Vec<f64>)>> {
        self.oracle.exact(theta).map(|r| r.map(|(j, d)| (j, vec![d])))
    }
}

/// Agent `i`'s share of a global sample: `(J/N, ∇_{θⁱ}J, Dⁱ, ∇Dⁱ)`.
pub fn agent_sample(block: &AgentBlock, n_agents: usize, sample: &MultiAgentSample) -> OracleSample {
    OracleSample {
        j_value: sample.j_value / n_agents as f64,
        j_grad: block.slice(&sample.j_grad),
        d_value: sample.d_values[block.index],
        d_grad: sample.d_grads[block.index].clone(),
    }
}

/// The local surrogate sample `J̃ⁱ(θⁱ)` of agent `i` about its slice of `center`.
pub fn agent_surrogate(
    block: &AgentBlock,
    n_agents: usize,
    sample: &MultiAgentSample,
    center: &Vector,
    tau: f64,
) -> Result<SeparableQuadratic> {
    let s = agent_sample(block, n_agents, sample);
    Ok(SeparableQuadratic::from_sample(s.j_value, &s.j_grad, &block.slice(center), tau)?)
}

/// One agent's surrogate state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub block: AgentBlock,
    pub stepper: Stepper,
}

impl AgentState {
    pub fn new(block: AgentBlock, cfg: &ScaConfig, theta0: &Vector) -> Result<Self> {
        let mut cfg = cfg.clone();
        if let Some(b) = &cfg.bounds {
            if b.dim() == theta0.len() && block.len != theta0.len() {
                let lo = b.lower.rows(block.offset, block.len).into_owned();
                let hi = b.upper.rows(block.offset, block.len).into_owned();
                cfg.bounds = Some(Bounds::new(lo, hi)?);
            }
        }
        let stepper = Stepper::new(cfg, block.d0, block.slice(theta0))?;
        Ok(Self { block, stepper })
    }
}

/// One synchronous round: every agent folds its share of `sample` into its
/// surrogates, solves its own subproblem and moves its block. Returns the
/// per-agent outcomes in agent order; a failing agent aborts the round.
pub fn mmdp_step(agents: &mut [AgentState], sample: &MultiAgentSample) -> Result<Vec<StepOutcome>> {
    let n = agents.len();
    if sample.d_values.len() != n || sample.d_grads.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: sample.d_values.len() });
    }
    agents
        .par_iter_mut()
        .map(|a| {
            let local = agent_sample(&a.block, n, sample);
            a.stepper.advance(&local).map_err(|e| agent_error(a.block.index, e))
        })
        .collect()
}

pub fn concat_theta(agents: &[AgentState]) -> Vector {
    let dim: usize = agents.iter().map(|a| a.block.len).sum();
    let mut theta = Vector::zeros(dim);
    for a in agents {
        theta.rows_mut(a.block.offset, a.block.len).copy_from(&a.stepper.theta);
    }
    theta
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub d: f64,
    pub feasible: bool,
    pub alpha: f64,
    pub lambda: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmdpRecord {
    pub k: usize,
    pub theta: Vector,
    pub j: f64,
    pub estimated: bool,
    pub eta: f64,
    pub rho: f64,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MmdpLog {
    pub d0: Vec<f64>,
    pub records: Vec<MmdpRecord>,
    pub final_theta: Vector,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("multi-agent run aborted after {} rounds: {source}", log.records.len())]
pub struct MmdpAborted {
    pub log: MmdpLog,
    pub source: Error,
}

/// Runs synchronous rounds from `theta0`, with the same step schedule,
/// seeding and stall rule as [`crate::sca::run`].
pub fn run<M: MultiAgentOracle>(oracle: &mut M, cfg: &ScaConfig, theta0: &Vector) -> Result<MmdpLog, MmdpAborted> {
    let blocks = oracle.blocks().to_vec();
    let mut log = MmdpLog { d0: blocks.iter().map(|b| b.d0).collect(), records: Vec::new(), final_theta: theta0.clone() };
    let setup = (|| {
        check_blocks(&blocks, theta0.len())?;
        blocks.iter().map(|b| AgentState::new(b.clone(), cfg, theta0).map_err(|e| agent_error(b.index, e))).collect::<Result<Vec<_>>>()
    })();
    let mut agents = match setup {
        Ok(a) => a,
        Err(source) => return Err(MmdpAborted { log, source }),
    };
    let mut rng = rng::stream(cfg.seed, 0);
    let mut still = 0usize;

    for k in 1..=cfg.max_iter {
        let theta = concat_theta(&agents);
        let result = (|| {
            let mut samples = (0..cfg.n_traj).map(|_| oracle.sample(&theta, &mut rng)).collect::<Result<Vec<_>>>()?;
            let sample = if samples.len() == 1 { samples.pop().expect("one sample") } else { mean_multi(&samples) };
            let (j, ds, estimated) = match oracle.exact(&theta) {
                Some(exact) => {
                    let (j, ds) = exact?;
                    (j, ds, false)
                }
                None => (sample.j_value, sample.d_values.clone(), true),
            };
            let outcomes = mmdp_step(&mut agents, &sample)?;
            Ok::<_, Error>((j, ds, estimated, outcomes))
        })();
        let (j, ds, estimated, outcomes) = match result {
            Ok(r) => r,
            Err(source) => return Err(MmdpAborted { log, source }),
        };
        let next = concat_theta(&agents);
        let moved = (&next - &theta).norm();
        let step = outcomes[0].step;
        log.records.push(MmdpRecord {
            k,
            theta,
            j,
            estimated,
            eta: step.eta,
            rho: step.rho,
            agents: outcomes
                .iter()
                .zip(&blocks)
                .map(|(o, b)| AgentRecord {
                    d: ds[b.index],
                    feasible: ds[b.index] <= b.d0 + cfg.feas_tol,
                    alpha: o.solution.alpha,
                    lambda: o.solution.lambda,
                    status: o.solution.status,
                })
                .collect(),
        });
        log.final_theta = next;
        still = if moved <= cfg.stall_tol { still + 1 } else { 0 };
        if still >= cfg.stall_window {
            break;
        }
    }
    Ok(log)
}

fn mean_multi(samples: &[MultiAgentSample]) -> MultiAgentSample {
    let mut acc = samples[0].clone();
    for s in &samples[1..] {
        acc.j_value += s.j_value;
        acc.j_grad += &s.j_grad;
        for (a, b) in acc.d_values.iter_mut().zip(&s.d_values) {
            *a += b;
        }
        for (a, b) in acc.d_grads.iter_mut().zip(&s.d_grads) {
            *a += b;
        }
    }
    let n = samples.len() as f64;
    acc.j_value /= n;
    acc.j_grad /= n;
    acc.d_values.iter_mut().for_each(|x| *x /= n);
    acc.d_grads.iter_mut().for_each(|g| *g /= n);
    acc
}

/// Stationarity of the concatenated problem with one constraint per block.
/// Because each constraint gradient lives in its own block, the multiplier
/// problem separates and the residual is the root sum of squares of the
/// per-block [`crate::sca::kkt_residual`] values.
pub fn kkt_residual(blocks: &[AgentBlock], sample: &MultiAgentSample, active_tol: f64) -> (f64, Vec<KktResidual>) {
    let per_block: Vec<KktResidual> = blocks
        .iter()
        .map(|b| {
            crate::sca::kkt_residual(&b.slice(&sample.j_grad), &sample.d_grads[b.index], sample.d_values[b.index], b.d0, active_tol)
        })
        .collect();
    let total = per_block.iter().map(|r| r.residual * r.residual).sum::<f64>().sqrt();
    (total, per_block)
}

/// Quadratic multi-agent test system:
///
/// ```text
/// J(θ) = Σᵢ ‖θⁱ - tⁱ‖² + κ Σ_{i<j} ⟨θⁱ, θʲ⟩,   Dⁱ(θⁱ) = ‖θⁱ - cⁱ‖² ≤ Dⁱ₀
/// ```
///
/// Samples add independent Gaussian noise of standard deviation `noise_std`
/// to every value and gradient entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledQuadratic {
    pub targets: Vec<Vector>,
    pub centers: Vec<Vector>,
    pub coupling: f64,
    pub noise_std: f64,
    blocks: Vec<AgentBlock>,
}

impl CoupledQuadratic {
    pub fn new(targets: Vec<Vector>, centers: Vec<Vector>, budgets: Vec<f64>, coupling: f64, noise_std: f64) -> Result<Self> {
        if targets.len() != centers.len() {
            return Err(Error::DimensionMismatch { expected: targets.len(), got: centers.len() });
        }
        let sizes: Vec<usize> = targets.iter().map(|t| t.len()).collect();
        for (t, c) in targets.iter().zip(&centers) {
            if t.len() != c.len() {
                return Err(Error::DimensionMismatch { expected: t.len(), got: c.len() });
            }
        }
        if budgets.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::InvalidProblem("per-agent budgets must be positive".into()));
        }
        if coupling != 0.0 && sizes.iter().any(|&n| n != sizes[0]) {
            return Err(Error::InvalidProblem("coupled agents need equal block sizes".into()));
        }
        if !coupling.is_finite() || !(noise_std >= 0.0) {
            return Err(Error::InvalidProblem("coupling must be finite and noise nonnegative".into()));
        }
        let blocks = contiguous_blocks(&sizes, &budgets)?;
        Ok(Self { targets, centers, coupling, noise_std, blocks })
    }

    /// `n_agents` blocks of size `block_dim`; targets and centers uniform on
    /// `[-2, 2]`, each budget a quarter of the squared target-center distance
    /// so that every constraint binds.
    pub fn generate(n_agents: usize, block_dim: usize, coupling: f64, seed: u64) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut draw = || Vector::from_fn(block_dim, |_, _| rng.random_range(-2.0..2.0));
        let mut targets = Vec::with_capacity(n_agents);
        let mut centers = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            targets.push(draw());
            centers.push(draw());
        }
        let budgets = targets.iter().zip(&centers).map(|(t, c)| 0.25 * (t - c).norm_squared()).collect();
        Self::new(targets, centers, budgets, coupling, 0.0)
    }

    pub fn n_agents(&self) -> usize {
        self.targets.len()
    }

    pub fn budgets(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.d0).collect()
    }

    pub fn exact_sample(&self, theta: &Vector) -> MultiAgentSample {
        let parts: Vec<Vector> = self.blocks.iter().map(|b| b.slice(theta)).collect();
        let coupled = self.coupling != 0.0;
        let total = if coupled { parts.iter().skip(1).fold(parts[0].clone(), |acc, p| acc + p) } else { Vector::zeros(0) };
        let mut j = 0.0;
        let mut j_grad = Vector::zeros(theta.len());
        for (b, p) in self.blocks.iter().zip(&parts) {
            let diff = p - &self.targets[b.index];
            j += diff.norm_squared();
            let mut g = diff * 2.0;
            if coupled {
                g += (&total - p) * self.coupling;
            }
            j_grad.rows_mut(b.offset, b.len).copy_from(&g);
        }
        if coupled {
            for i in 0..parts.len() {
                for k in i + 1..parts.len() {
                    j += self.coupling * parts[i].dot(&parts[k]);
                }
            }
        }
        let d_values = parts.iter().zip(&self.centers).map(|(p, c)| (p - c).norm_squared()).collect();
        let d_grads = parts.iter().zip(&self.centers).map(|(p, c)| (p - c) * 2.0).collect();
        MultiAgentSample { j_value: j, j_grad, d_values, d_grads }
    }
}

impl MultiAgentOracle for CoupledQuadratic {
    fn blocks(&self) -> &[AgentBlock] {
        &self.blocks
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<MultiAgentSample> {
        if theta.len() != MultiAgentOracle::dim(self) {
            return Err(Error::DimensionMismatch { expected: MultiAgentOracle::dim(self), got: theta.len() });
        }
        let mut s = self.exact_sample(theta);
        if self.noise_std > 0.0 {
            let sd = self.noise_std;
            let mut noise = || sd * rng.sample::<f64, _>(StandardNormal);
            s.j_value += noise();
            s.j_grad.iter_mut().for_each(|x| *x += noise());
            for (d, g) in s.d_values.iter_mut().zip(s.d_grads.iter_mut()) {
                *d += noise();
                g.iter_mut().for_each(|x| *x += noise());
            }
        }
        Ok(s)
    }

    fn exact(&self, theta: &Vector) -> Option<Result<(f64, Vec<f64>)>> {
        let s = self.exact_sample(theta);
        Some(Ok((s.j_value, s.d_values)))
    }
}
