//! Monte-Carlo oracles for discounted constrained MDPs.
//!
//! The objective is the negative discounted reward `J(θ) = -E[Σ γᵗ r_t]` and
//! the constraint the discounted cost `D(θ) = E[Σ γᵗ d_t]`. Infinite sums are
//! estimated by rolling out to a geometric horizon `T` with
//! `Pr(T = t) = (1 - γ)γᵗ`; the undiscounted partial sum up to `T` is then an
//! unbiased estimate of the discounted sum. Gradients follow the policy
//! gradient theorem with `Q` estimated by an independent truncated rollout.
//!
//! [`TabularCmdp`] together with [`exact_tabular`] provides closed-form
//! values for testing the estimators.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::mat::{Matrix, Vector};
use crate::rng::SimRng;
use crate::sca::{ConstrainedOracle, OracleSample};
use crate::{Error, Result};

/// Stochastic rows must sum to one within this.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<S> {
    pub reward: f64,
    pub cost: f64,
    pub next: S,
}

pub trait Environment {
    type State: Clone;
    type Action: Clone;

    fn initial_state(&self, rng: &mut SimRng) -> Self::State;

    fn step(&self, state: &Self::State, action: &Self::Action, rng: &mut SimRng) -> Transition<Self::State>;
}

/// A differentiable stochastic policy `π_θ(a | s)`.
pub trait Policy {
    type State;
    type Action;

    fn dim(&self) -> usize;

    fn params(&self) -> Vector;

    fn set_params(&mut self, theta: &Vector) -> Result<()>;

    fn sample_action(&self, state: &Self::State, rng: &mut SimRng) -> Self::Action;

    fn log_prob(&self, state: &Self::State, action: &Self::Action) -> f64;

    /// `∇_θ log π_θ(a | s)`.
    fn grad_log_prob(&self, state: &Self::State, action: &Self::Action) -> Vector;
}

/// A policy over finitely many actions with explicit probabilities.
pub trait DiscretePolicy: Policy<State = usize, Action = usize> {
    fn action_probs(&self, state: usize) -> Vector;
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Index of the category `u ∈ [0, 1)` falls into under `probs`.
fn categorical(probs: impl IntoIterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just below one.
    last
}

/// Per-state softmax over action logits; `θ` is the row-major
/// `n_states × n_actions` logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vector,
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, theta: Vector) -> Result<Self> {
        check_dim(n_states * n_actions, theta.len())?;
        Ok(Self { n_states, n_actions, theta })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: Vector::zeros(n_states * n_actions) }
    }

    fn logits(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        self.theta.iter().skip(s * self.n_actions).take(self.n_actions).copied()
    }
}

impl Policy for SoftmaxPolicy {
    type State = usize;
    type Action = usize;

    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> Vector {
        self.theta.clone()
    }

    fn set_params(&mut self, theta: &Vector) -> Result<()> {
        check_dim(self.theta.len(), theta.len())?;
        self.theta.copy_from(theta);
        Ok(())
    }

    fn sample_action(&self, state: &usize, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        categorical(self.action_probs(*state).iter().copied(), u)
    }

    fn log_prob(&self, state: &usize, action: &usize) -> f64 {
        let max = self.logits(*state).fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + self.logits(*state).map(|l| (l - max).exp()).sum::<f64>().ln();
        self.theta[state * self.n_actions + action] - log_z
    }

    fn grad_log_prob(&self, state: &usize, action: &usize) -> Vector {
        let probs = self.action_probs(*state);
        let mut g = Vector::zeros(self.theta.len());
        let base = state * self.n_actions;
        for b in 0..self.n_actions {
            g[base + b] = if b == *action { 1.0 } else { 0.0 } - probs[b];
        }
        g
    }
}

impl DiscretePolicy for SoftmaxPolicy {
    fn action_probs(&self, state: usize) -> Vector {
        let max = self.logits(state).fold(f64::NEG_INFINITY, f64::max);
        let mut p = Vector::from_iterator(self.n_actions, self.logits(state).map(|l| (l - max).exp()));
        let z = p.sum();
        p /= z;
        p
    }
}

pub type FeatureMap<S> = Arc<dyn Fn(&S) -> Vector + Send + Sync>;

/// Scalar-action Gaussian policy with mean `θ_μᵀx(s)` and standard deviation
/// `exp(θ_σᵀx(s))`. The parameter vector is `[θ_μ; θ_σ]`.
#[derive(Clone)]
pub struct GaussianPolicy<S> {
    pub theta_mu: Vector,
    pub theta_sigma: Vector,
    pub features: FeatureMap<S>,
}

impl<S> std::fmt::Debug for GaussianPolicy<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianPolicy")
            .field("theta_mu", &self.theta_mu)
            .field("theta_sigma", &self.theta_sigma)
            .finish_non_exhaustive()
    }
}

impl<S> GaussianPolicy<S> {
    pub fn new(theta_mu: Vector, theta_sigma: Vector, features: FeatureMap<S>) -> Result<Self> {
        check_dim(theta_mu.len(), theta_sigma.len())?;
        Ok(Self { theta_mu, theta_sigma, features })
    }

    pub fn mean(&self, state: &S) -> f64 {
        self.theta_mu.dot(&(self.features)(state))
    }

    pub fn std_dev(&self, state: &S) -> f64 {
        self.theta_sigma.dot(&(self.features)(state)).exp()
    }
}

impl<S> Policy for GaussianPolicy<S> {
    type State = S;
    type Action = f64;

    fn dim(&self) -> usize {
        2 * self.theta_mu.len()
    }

    fn params(&self) -> Vector {
        let k = self.theta_mu.len();
        Vector::from_fn(2 * k, |i, _| if i < k { self.theta_mu[i] } else { self.theta_sigma[i - k] })
    }

    fn set_params(&mut self, theta: &Vector) -> Result<()> {
        check_dim(self.dim(), theta.len())?;
        let k = self.theta_mu.len();
        self.theta_mu.copy_from(&theta.rows(0, k));
        self.theta_sigma.copy_from(&theta.rows(k, k));
        Ok(())
    }

    fn sample_action(&self, state: &S, rng: &mut SimRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean(state) + self.std_dev(state) * z
    }

    fn log_prob(&self, state: &S, action: &f64) -> f64 {
        let x = (self.features)(state);
        let log_sigma = self.theta_sigma.dot(&x);
        let z = (action - self.theta_mu.dot(&x)) / log_sigma.exp();
        -0.5 * z * z - log_sigma - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn grad_log_prob(&self, state: &S, action: &f64) -> Vector {
        let x = (self.features)(state);
        let sigma = self.theta_sigma.dot(&x).exp();
        let z = (action - self.theta_mu.dot(&x)) / sigma;
        let k = x.len();
        Vector::from_fn(2 * k, |i, _| if i < k { z / sigma * x[i] } else { (z * z - 1.0) * x[i - k] })
    }
}

/// Finite CMDP `(S, A, P, γ, r, d, μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[(s * n_actions + a, s')] = P(s' | s, a)`.
    pub transitions: Matrix,
    /// `n_states × n_actions`.
    pub reward: Matrix,
    pub cost: Matrix,
    pub gamma: f64,
    pub mu: Vector,
}

impl TabularCmdp {
    pub fn new(transitions: Matrix, reward: Matrix, cost: Matrix, gamma: f64, mu: Vector) -> Result<Self> {
        let env = Self {
            n_states: reward.nrows(),
            n_actions: reward.ncols(),
            transitions,
            reward,
            cost,
            gamma,
            mu,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidProblem("tabular CMDP needs at least one state and action".into()));
        }
        if self.transitions.shape() != (ns * na, ns) || self.cost.shape() != (ns, na) || self.mu.len() != ns {
            return Err(Error::InvalidProblem("tabular CMDP tables have inconsistent shapes".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidProblem(format!("discount {} outside [0, 1)", self.gamma)));
        }
        let finite = |m: &Matrix| m.iter().all(|x| x.is_finite());
        if !finite(&self.reward) || !finite(&self.cost) {
            return Err(Error::InvalidProblem("reward and cost tables must be finite".into()));
        }
        let stochastic = |row: &[f64]| row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL;
        for i in 0..ns * na {
            let row: Vec<f64> = self.transitions.row(i).iter().copied().collect();
            if !stochastic(&row) {
                return Err(Error::InvalidProblem(format!(
                    "transition row for state {} action {} is not a distribution",
                    i / na,
                    i % na
                )));
            }
        }
        if !stochastic(self.mu.as_slice()) {
            return Err(Error::InvalidProblem("initial distribution is not a distribution".into()));
        }
        Ok(())
    }

    /// Dirichlet(1) transition rows and initial distribution, rewards and
    /// costs uniform on `[0, 1)`.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut simplex = |len: usize| {
            let mut w: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            w
        };
        let mut transitions = Matrix::zeros(n_states * n_actions, n_states);
        for i in 0..n_states * n_actions {
            for (j, p) in simplex(n_states).into_iter().enumerate() {
                transitions[(i, j)] = p;
            }
        }
        let mu = Vector::from_vec(simplex(n_states));
        let reward = Matrix::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
        let cost = Matrix::from_fn(n_states, n_actions, |_, _| rng.random::<f64>());
        Self::new(transitions, reward, cost, gamma, mu)
    }

    pub fn transition_row(&self, s: usize, a: usize) -> impl Iterator<Item = f64> + '_ {
        let row = s * self.n_actions + a;
        (0..self.n_states).map(move |j| self.transitions[(row, j)])
    }
}

impl Environment for TabularCmdp {
    type State = usize;
    type Action = usize;

    fn initial_state(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        categorical(self.mu.iter().copied(), u)
    }

    fn step(&self, state: &usize, action: &usize, rng: &mut SimRng) -> Transition<usize> {
        let u: f64 = rng.random();
        Transition {
            reward: self.reward[(*state, *action)],
            cost: self.cost[(*state, *action)],
            next: categorical(self.transition_row(*state, *action), u),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step<S, A> {
    pub state: S,
    pub action: A,
    pub reward: f64,
    pub cost: f64,
}

/// Steps `0..=horizon` of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S, A> {
    pub steps: Vec<Step<S, A>>,
    pub horizon: usize,
}

impl<S, A> Trajectory<S, A> {
    pub fn reward_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn cost_sum(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

/// How truncated sums are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimatorScale {
    /// Plain partial sums: unbiased for the discounted sums themselves.
    #[default]
    Rescaled,
    /// Partial sums multiplied by `1 - γ`: unbiased for `(1 - γ)` times
    /// the discounted sums.
    Normalized,
}

impl EstimatorScale {
    pub fn factor(self, gamma: f64) -> f64 {
        match self {
            Self::Rescaled => 1.0,
            Self::Normalized => 1.0 - gamma,
        }
    }
}

/// `T` with `Pr(T = t) = (1 - γ)γᵗ`, by inversion.
pub fn sample_geometric_horizon(gamma: f64, rng: &mut SimRng) -> usize {
    // 1 - U lies in (0, 1], so the logarithm is finite and nonpositive.
    let u = 1.0 - rng.random::<f64>();
    let t = (u.ln() / gamma.ln()).floor();
    if t.is_finite() && t > 0.0 {
        t.min(usize::MAX as f64) as usize
    } else {
        0
    }
}

/// Rolls out `horizon + 1` steps from `start`, optionally forcing the first action.
pub fn rollout<E, P>(
    env: &E,
    policy: &P,
    start: E::State,
    first_action: Option<E::Action>,
    horizon: usize,
    rng: &mut SimRng,
) -> Trajectory<E::State, E::Action>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut state = start;
    let mut forced = first_action;
    for t in 0..=horizon {
        let action = forced.take().unwrap_or_else(|| policy.sample_action(&state, rng));
        let tr = env.step(&state, &action, rng);
        let next = tr.next;
        steps.push(Step { state, action, reward: tr.reward, cost: tr.cost });
        if t == horizon {
            break;
        }
        state = next;
    }
    Trajectory { steps, horizon }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedReturn<S, A> {
    pub j: f64,
    pub d: f64,
    pub trajectory: Trajectory<S, A>,
}

/// One truncated-horizon realization of `(J, D)`.
pub fn sample_truncated_return<E, P>(
    env: &E,
    policy: &P,
    gamma: f64,
    scale: EstimatorScale,
    rng: &mut SimRng,
) -> TruncatedReturn<E::State, E::Action>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    let start = env.initial_state(rng);
    let horizon = sample_geometric_horizon(gamma, rng);
    let trajectory = rollout(env, policy, start, None, horizon, rng);
    let f = scale.factor(gamma);
    TruncatedReturn { j: -f * trajectory.reward_sum(), d: f * trajectory.cost_sum(), trajectory }
}

/// State-value baselines `(V_r(s), V_d(s))` subtracted from the sampled `Q`.
pub trait Baseline<S> {
    fn values(&self, state: &S) -> (f64, f64);
}

/// Baseline from per-state value tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBaseline {
    pub reward: Vector,
    pub cost: Vector,
}

impl Baseline<usize> for TabularBaseline {
    fn values(&self, state: &usize) -> (f64, f64) {
        (self.reward[*state], self.cost[*state])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradientSample {
    pub j_grad: Vector,
    pub d_grad: Vector,
}

/// One realization of `(∇J, ∇D)`.
///
/// A state is drawn from the normalized discounted occupancy by walking a
/// geometric number of steps, an action from the policy, and `Q(s, a)` for
/// reward and cost from a second, independent truncated rollout starting at
/// `(s, a)`. The estimate is `∓(1-γ)⁻¹ ∇log π(a|s) (Q(s, a) - b(s))`.
pub fn sample_policy_gradient<E, P>(
    env: &E,
    policy: &P,
    gamma: f64,
    scale: EstimatorScale,
    baseline: Option<&dyn Baseline<E::State>>,
    rng: &mut SimRng,
) -> PolicyGradientSample
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    let mut state = env.initial_state(rng);
    for _ in 0..sample_geometric_horizon(gamma, rng) {
        let action = policy.sample_action(&state, rng);
        state = env.step(&state, &action, rng).next;
    }
    let action = policy.sample_action(&state, rng);
    let score = policy.grad_log_prob(&state, &action);
    let (b_r, b_d) = baseline.map_or((0.0, 0.0), |b| b.values(&state));
    let horizon = sample_geometric_horizon(gamma, rng);
    let q = rollout(env, policy, state, Some(action), horizon, rng);
    let w = scale.factor(gamma) / (1.0 - gamma);
    PolicyGradientSample {
        j_grad: &score * (-w * (q.reward_sum() - b_r)),
        d_grad: &score * (w * (q.cost_sum() - b_d)),
    }
}

/// Exact quantities of a tabular CMDP under a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEvaluation {
    pub j: f64,
    pub d: f64,
    pub j_grad: Vector,
    pub d_grad: Vector,
    /// Discounted reward and cost values per state.
    pub v_reward: Vector,
    pub v_cost: Vector,
    /// `n_states × n_actions` action values.
    pub q_reward: Matrix,
    pub q_cost: Matrix,
    /// Unnormalized discounted occupancy `μᵀ(I - γP_π)⁻¹`; sums to `1/(1-γ)`.
    pub occupancy: Vector,
}

impl TabularEvaluation {
    pub fn baseline(&self) -> TabularBaseline {
        TabularBaseline { reward: self.v_reward.clone(), cost: self.v_cost.clone() }
    }
}

/// `(I - γP_π)⁻¹` solves for values and occupancy, and the policy gradient
/// theorem summed exactly over states and actions.
pub fn exact_tabular<P: DiscretePolicy>(env: &TabularCmdp, policy: &P) -> Result<TabularEvaluation> {
    let (ns, na, gamma) = (env.n_states, env.n_actions, env.gamma);
    let probs: Vec<Vector> = (0..ns).map(|s| policy.action_probs(s)).collect();
    let mut p_pi = Matrix::zeros(ns, ns);
    let mut r_pi = Vector::zeros(ns);
    let mut d_pi = Vector::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = probs[s][a];
            r_pi[s] += pa * env.reward[(s, a)];
            d_pi[s] += pa * env.cost[(s, a)];
            for s2 in 0..ns {
                p_pi[(s, s2)] += pa * env.transitions[(s * na + a, s2)];
            }
        }
    }
    let system = Matrix::identity(ns, ns) - &p_pi * gamma;
    let lu = system.clone().lu();
    let singular = || Error::SingularSystem("I - γP_π".into());
    let v_reward = lu.solve(&r_pi).ok_or_else(singular)?;
    let v_cost = lu.solve(&d_pi).ok_or_else(singular)?;
    let occupancy = system.transpose().lu().solve(&env.mu).ok_or_else(singular)?;

    let next_value = |v: &Vector, s: usize, a: usize| -> f64 { (0..ns).map(|s2| env.transitions[(s * na + a, s2)] * v[s2]).sum() };
    let q_reward = Matrix::from_fn(ns, na, |s, a| env.reward[(s, a)] + gamma * next_value(&v_reward, s, a));
    let q_cost = Matrix::from_fn(ns, na, |s, a| env.cost[(s, a)] + gamma * next_value(&v_cost, s, a));

    let mut j_grad = Vector::zeros(policy.dim());
    let mut d_grad = Vector::zeros(policy.dim());
    for s in 0..ns {
        for a in 0..na {
            let weight = occupancy[s] * probs[s][a];
            if weight == 0.0 {
                continue;
            }
            let score = policy.grad_log_prob(&s, &a);
            j_grad -= &score * (weight * q_reward[(s, a)]);
            d_grad += &score * (weight * q_cost[(s, a)]);
        }
    }
    Ok(TabularEvaluation {
        j: -env.mu.dot(&v_reward),
        d: env.mu.dot(&v_cost),
        j_grad,
        d_grad,
        v_reward,
        v_cost,
        q_reward,
        q_cost,
        occupancy,
    })
}

pub type ExactEvaluator = Arc<dyn Fn(&Vector) -> Result<(f64, f64)> + Send + Sync>;

/// [`ConstrainedOracle`] drawing one truncated return and one policy-gradient
/// realization per sample.
#[derive(Clone)]
pub struct MdpOracle<E: Environment, P> {
    pub env: E,
    pub policy: P,
    pub gamma: f64,
    pub d0: f64,
    pub scale: EstimatorScale,
    pub baseline: Option<Arc<dyn Baseline<E::State> + Send + Sync>>,
    /// Closed-form `(J, D)` for logging, when available.
    pub evaluator: Option<ExactEvaluator>,
}

impl<E: Environment, P> std::fmt::Debug for MdpOracle<E, P> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MdpOracle")
            .field("gamma", &self.gamma)
            .field("d0", &self.d0)
            .field("scale", &self.scale)
            .finish_non_exhaustive()
    }
}

impl<E, P> MdpOracle<E, P>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    pub fn new(env: E, policy: P, gamma: f64, d0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidProblem(format!("discount {gamma} outside [0, 1)")));
        }
        Ok(Self { env, policy, gamma, d0, scale: EstimatorScale::Rescaled, baseline: None, evaluator: None })
    }
}

impl MdpOracle<TabularCmdp, SoftmaxPolicy> {
    /// Softmax policy on a tabular CMDP, logged with exact values.
    pub fn tabular(env: TabularCmdp, d0: f64) -> Result<Self> {
        env.validate()?;
        let policy = SoftmaxPolicy::uniform(env.n_states, env.n_actions);
        let gamma = env.gamma;
        let exact_env = env.clone();
        let evaluator: ExactEvaluator = Arc::new(move |theta: &Vector| {
            let policy = SoftmaxPolicy::new(exact_env.n_states, exact_env.n_actions, theta.clone())?;
            let e = exact_tabular(&exact_env, &policy)?;
            Ok((e.j, e.d))
        });
        let mut oracle = Self::new(env, policy, gamma, d0)?;
        oracle.evaluator = Some(evaluator);
        Ok(oracle)
    }
}

impl<E, P> ConstrainedOracle for MdpOracle<E, P>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn budget(&self) -> f64 {
        self.d0
    }

    fn sample(&mut self, theta: &Vector, rng: &mut SimRng) -> Result<OracleSample> {
        self.policy.set_params(theta)?;
        let ret = sample_truncated_return(&self.env, &self.policy, self.gamma, self.scale, rng);
        let baseline = self.baseline.as_deref().map(|b| b as &dyn Baseline<E::State>);
        let pg = sample_policy_gradient(&self.env, &self.policy, self.gamma, self.scale, baseline, rng);
        Ok(OracleSample { j_value: ret.j, j_grad: pg.j_grad, d_value: ret.d, d_grad: pg.d_grad })
    }

    fn exact(&self, theta: &Vector) -> Option<Result<(f64, f64)>> {
        self.evaluator.as_ref().map(|e| e(theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// One state, one action, reward and cost one.
    fn unit_chain(gamma: f64) -> TabularCmdp {
        TabularCmdp::new(Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, 1.0), Matrix::from_element(1, 1, 1.0), gamma, v(&[1.0]))
            .unwrap()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(categorical([0.5, 0.5], 0.0), 0);
        assert_eq!(categorical([0.5, 0.5], 0.5), 1);
        assert_eq!(categorical([0.0, 1.0], 0.0), 1);
        assert_eq!(categorical([0.3, 0.7, 0.0], 0.999_999_999_999_999_9), 1);
    }

    #[test]
    fn near_zero_discount_gives_single_step() {
        let env = unit_chain(1e-9);
        let policy = SoftmaxPolicy::uniform(1, 1);
        let mut rng = rng::stream(1, 0);
        for _ in 0..1000 {
            let r = sample_truncated_return(&env, &policy, 1e-9, EstimatorScale::Rescaled, &mut rng);
            assert_eq!(r.trajectory.horizon, 0);
            assert_eq!(r.trajectory.steps.len(), 1);
            assert_eq!(r.j, -1.0);
        }
    }

    #[test]
    fn unit_reward_mean_is_geometric_sum() {
        let env = unit_chain(0.9);
        let policy = SoftmaxPolicy::uniform(1, 1);
        let mut rng = rng::stream(2, 0);
        let xs: Vec<f64> =
            (0..100_000).map(|_| sample_truncated_return(&env, &policy, 0.9, EstimatorScale::Rescaled, &mut rng).j).collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean + 10.0).abs() <= 3.0 * se, "{mean} ± {se}");

        // The normalized form estimates (1 - γ) times the same quantity.
        let mut rng = rng::stream(2, 0);
        let raw = sample_truncated_return(&env, &policy, 0.9, EstimatorScale::Normalized, &mut rng);
        assert!((raw.j - 0.1 * xs[0]).abs() < 1e-12);
    }

    #[test]
    fn trajectory_length_is_horizon_plus_one() {
        let env = TabularCmdp::random(3, 2, 0.8, 5).unwrap();
        let policy = SoftmaxPolicy::uniform(3, 2);
        let mut rng = rng::stream(3, 0);
        for _ in 0..200 {
            let r = sample_truncated_return(&env, &policy, 0.8, EstimatorScale::Rescaled, &mut rng);
            assert_eq!(r.trajectory.steps.len(), r.trajectory.horizon + 1);
        }
    }

    #[test]
    fn zero_discount_exact_values() {
        let mut env = TabularCmdp::random(3, 2, 0.5, 11).unwrap();
        env.gamma = 0.0;
        let policy = SoftmaxPolicy::new(3, 2, v(&[0.3, -0.2, 1.0, 0.0, -0.5, 0.4])).unwrap();
        let e = exact_tabular(&env, &policy).unwrap();
        let expected: f64 =
            (0..3).map(|s| env.mu[s] * (0..2).map(|a| policy.action_probs(s)[a] * env.reward[(s, a)]).sum::<f64>()).sum();
        assert!((e.j + expected).abs() < 1e-15);
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let mut env = TabularCmdp::random(3, 2, 0.7, 12).unwrap();
        env.reward = Matrix::from_element(3, 2, 2.0);
        let policy = SoftmaxPolicy::new(3, 2, v(&[0.1, 0.9, -1.0, 0.2, 0.0, 0.5])).unwrap();
        let e = exact_tabular(&env, &policy).unwrap();
        assert!((e.j + 2.0 / 0.3).abs() < 1e-12);
        assert!(e.j_grad.amax() < 1e-12);
        assert!((e.occupancy.sum() - 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let env = TabularCmdp::random(3, 2, 0.9, 13).unwrap();
        let theta = v(&[0.4, -0.3, 0.2, 1.1, -0.7, 0.05]);
        let policy = SoftmaxPolicy::new(3, 2, theta.clone()).unwrap();
        let e = exact_tabular(&env, &policy).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() {
            let eval = |delta: f64| {
                let mut t = theta.clone();
                t[i] += delta;
                exact_tabular(&env, &SoftmaxPolicy::new(3, 2, t).unwrap()).unwrap()
            };
            let (up, dn) = (eval(h), eval(-h));
            assert!(((up.j - dn.j) / (2.0 * h) - e.j_grad[i]).abs() < 1e-7);
            assert!(((up.d - dn.d) / (2.0 * h) - e.d_grad[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_log_likelihood_gradient() {
        let policy = SoftmaxPolicy::new(2, 3, v(&[0.2, -1.0, 0.5, 2.0, 0.1, -0.3])).unwrap();
        let h = 1e-6;
        for s in 0..2 {
            for a in 0..3 {
                let g = policy.grad_log_prob(&s, &a);
                for i in 0..6 {
                    let mut up = policy.clone();
                    let mut dn = policy.clone();
                    up.theta[i] += h;
                    dn.theta[i] -= h;
                    let fd = (up.log_prob(&s, &a) - dn.log_prob(&s, &a)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-8);
                }
            }
        }
        let p = policy.action_probs(1);
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_log_likelihood_gradient() {
        let features: FeatureMap<f64> = Arc::new(|s: &f64| v(&[1.0, *s, s * s]));
        let mut rng = rng::stream(21, 0);
        for _ in 0..50 {
            let mu = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let sig = Vector::from_fn(3, |_, _| rng.random_range(-0.5..0.5));
            let policy = GaussianPolicy::new(mu, sig, features.clone()).unwrap();
            let s: f64 = rng.random_range(-1.0..1.0);
            let a: f64 = rng.random_range(-2.0..2.0);
            let g = policy.grad_log_prob(&s, &a);
            let theta = policy.params();
            let h = 1e-6;
            for i in 0..6 {
                let mut up = policy.clone();
                let mut dn = policy.clone();
                let mut t = theta.clone();
                t[i] += h;
                up.set_params(&t).unwrap();
                t[i] -= 2.0 * h;
                dn.set_params(&t).unwrap();
                let fd = (up.log_prob(&s, &a) - dn.log_prob(&s, &a)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gaussian_sampling_moments() {
        let features: FeatureMap<f64> = Arc::new(|_: &f64| v(&[1.0]));
        let policy = GaussianPolicy::new(v(&[0.5]), v(&[(2.0f64).ln()]), features).unwrap();
        let mut rng = rng::stream(22, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| policy.sample_action(&0.0, &mut rng)).collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean - 0.5).abs() < 3.0 * se);
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99_999.0;
        assert!((var - 4.0).abs() < 0.1);
    }

    #[test]
    fn zero_reward_gradient_has_zero_mean() {
        let mut env = TabularCmdp::random(3, 2, 0.8, 14).unwrap();
        env.reward = Matrix::zeros(3, 2);
        let policy = SoftmaxPolicy::new(3, 2, v(&[0.5, 0.0, -0.5, 0.3, 0.2, 0.1])).unwrap();
        let mut rng = rng::stream(4, 0);
        for _ in 0..10_000 {
            let g = sample_policy_gradient(&env, &policy, 0.8, EstimatorScale::Rescaled, None, &mut rng);
            assert_eq!(g.j_grad.amax(), 0.0);
        }
    }

    #[test]
    fn geometric_horizon_mean() {
        let mut rng = rng::stream(5, 0);
        let n = 100_000;
        let total: usize = (0..n).map(|_| sample_geometric_horizon(0.95, &mut rng) + 1).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 20.0).abs() / 20.0 < 0.01, "{mean}");
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let bad = TabularCmdp::new(Matrix::from_element(1, 1, 0.9), Matrix::zeros(1, 1), Matrix::zeros(1, 1), 0.5, v(&[1.0]));
        assert!(matches!(bad, Err(Error::InvalidProblem(_))));
        let bad_gamma = TabularCmdp::new(Matrix::from_element(1, 1, 1.0), Matrix::zeros(1, 1), Matrix::zeros(1, 1), 1.0, v(&[1.0]));
        assert!(bad_gamma.is_err());
    }
}
