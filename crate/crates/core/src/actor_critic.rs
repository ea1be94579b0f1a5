//! Online actor-critic variant for the long-run average-reward problem
//!
//! ```text
//! minimize  J(θ) = -lim (1/T) E[Σ r_t]   subject to  D(θ) = lim (1/T) E[Σ d_t] ≤ D0.
//! ```
//!
//! Each transition updates two linear TD(0) critics and the running averages
//! of reward and cost; the actor then feeds `(-J̄, -δᴶ∇log π)` and
//! `(D̄, δᴰ∇log π)` to the same surrogate step used by [`crate::sca`].
//! The reward tracker follows the observed rewards, so the objective sample
//! is its negation.

use std::sync::Arc;

use crate::mat::{Matrix, Vector};
use crate::mdp_oracle::{DiscretePolicy, Environment, ExactEvaluator, Policy, TabularCmdp};
use crate::rng;
use crate::sca::{Aborted, IterateLog, IterateRecord, OracleSample, ScaConfig, Stepper};
use crate::{Error, Result};

/// State features `x(s)` of the linear critics `V_w(s) = wᵀx(s)`.
pub type StateFeatures<S> = Arc<dyn Fn(&S) -> Vector + Send + Sync>;

/// One-hot features for a finite state space.
pub fn one_hot_features(n_states: usize) -> StateFeatures<usize> {
    Arc::new(move |s: &usize| {
        let mut x = Vector::zeros(n_states);
        x[*s] = 1.0;
        x
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    /// Reward critic weights.
    pub w: Vector,
    /// Cost critic weights.
    pub v: Vector,
    pub j_avg: f64,
    pub d_avg: f64,
    pub beta_w: f64,
    pub beta_v: f64,
    /// TD errors of the most recent transition.
    pub delta_j: f64,
    pub delta_d: f64,
}

impl CriticState {
    /// Zero critics, trackers and TD errors.
    pub fn new(feature_dim: usize, beta_w: f64, beta_v: f64) -> Result<Self> {
        if !(beta_w > 0.0 && beta_v > 0.0) {
            return Err(Error::InvalidConfig(format!("critic step sizes must be positive, got {beta_w} and {beta_v}")));
        }
        Ok(Self {
            w: Vector::zeros(feature_dim),
            v: Vector::zeros(feature_dim),
            j_avg: 0.0,
            d_avg: 0.0,
            beta_w,
            beta_v,
            delta_j: 0.0,
            delta_d: 0.0,
        })
    }

    pub fn reward_value(&self, x: &Vector) -> f64 {
        self.w.dot(x)
    }

    pub fn cost_value(&self, x: &Vector) -> f64 {
        self.v.dot(x)
    }
}

/// An observed transition `(s, r, d, s')`. The action does not enter the
/// critic update.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<S> {
    pub state: S,
    pub reward: f64,
    pub cost: f64,
    pub next: S,
}

/// One TD(0) step.
///
/// `δᴶ = r - J̄ + V_w(s') - V_w(s)` is formed with the pre-update weights and
/// tracker, then `w ← w + β_w δᴶ x(s)` and `J̄ ← J̄ + β_w (r - J̄)`; likewise
/// for the cost critic.
pub fn critic_update<S>(state: &CriticState, features: &dyn Fn(&S) -> Vector, obs: &Observation<S>) -> CriticState {
    let x = features(&obs.state);
    let x_next = features(&obs.next);
    let delta_j = obs.reward - state.j_avg + state.reward_value(&x_next) - state.reward_value(&x);
    let delta_d = obs.cost - state.d_avg + state.cost_value(&x_next) - state.cost_value(&x);
    CriticState {
        w: &state.w + &x * (state.beta_w * delta_j),
        v: &state.v + &x * (state.beta_v * delta_d),
        j_avg: state.j_avg + state.beta_w * (obs.reward - state.j_avg),
        d_avg: state.d_avg + state.beta_v * (obs.cost - state.d_avg),
        beta_w: state.beta_w,
        beta_v: state.beta_v,
        delta_j,
        delta_d,
    }
}

/// The surrogate inputs of one actor step taken after action `a` in state `s`.
pub fn actor_surrogate_inputs<P: Policy>(state: &CriticState, policy: &P, s: &P::State, a: &P::Action) -> OracleSample {
    let score = policy.grad_log_prob(s, a);
    OracleSample {
        j_value: -state.j_avg,
        j_grad: &score * (-state.delta_j),
        d_value: state.d_avg,
        d_grad: score * state.delta_d,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticConfig {
    /// Surrogate settings; `max_iter` counts actor steps.
    pub sca: ScaConfig,
    pub beta_w: f64,
    pub beta_v: f64,
    /// Transitions per actor step.
    pub n_actor: usize,
}

impl Default for ActorCriticConfig {
    fn default() -> Self {
        Self { sca: ScaConfig::default(), beta_w: 0.01, beta_v: 0.01, n_actor: 1 }
    }
}

impl ActorCriticConfig {
    pub fn validate(&self) -> Result<()> {
        self.sca.validate()?;
        if !(self.beta_w > 0.0 && self.beta_w <= 1.0 && self.beta_v > 0.0 && self.beta_v <= 1.0) {
            return Err(Error::InvalidConfig("critic step sizes must lie in (0, 1]".into()));
        }
        if self.n_actor == 0 {
            return Err(Error::InvalidConfig("n_actor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Environment, policy and critic features of one online run.
pub struct ActorCriticProblem<E: Environment, P> {
    pub env: E,
    pub policy: P,
    pub features: StateFeatures<E::State>,
    pub d0: f64,
    /// Closed-form average `(J, D)` for logging, when available.
    pub evaluator: Option<ExactEvaluator>,
}

impl ActorCriticProblem<TabularCmdp, crate::mdp_oracle::SoftmaxPolicy> {
    /// Softmax policy with one-hot critics, logged with exact averages.
    pub fn tabular(env: TabularCmdp, d0: f64) -> Result<Self> {
        env.validate()?;
        let (ns, na) = (env.n_states, env.n_actions);
        let exact_env = env.clone();
        let evaluator: ExactEvaluator = Arc::new(move |theta: &Vector| {
            let policy = crate::mdp_oracle::SoftmaxPolicy::new(ns, na, theta.clone())?;
            let e = average_reward_tabular(&exact_env, &policy)?;
            Ok((e.j, e.d))
        });
        Ok(Self {
            env,
            policy: crate::mdp_oracle::SoftmaxPolicy::uniform(ns, na),
            features: one_hot_features(ns),
            d0,
            evaluator: Some(evaluator),
        })
    }
}

/// Runs the online loop from `theta0` on a single trajectory seeded by `cfg.sca.seed`.
///
/// Records carry the estimated trackers `(-J̄, D̄)` unless the problem has an
/// exact evaluator.
pub fn run<E, P>(problem: &mut ActorCriticProblem<E, P>, cfg: &ActorCriticConfig, theta0: &Vector) -> Result<IterateLog, Aborted>
where
    E: Environment,
    P: Policy<State = E::State, Action = E::Action>,
{
    let d0 = problem.d0;
    let mut log = IterateLog { d0, records: Vec::new(), final_theta: theta0.clone() };
    let setup = (|| {
        cfg.validate()?;
        if theta0.len() != problem.policy.dim() {
            return Err(Error::DimensionMismatch { expected: problem.policy.dim(), got: theta0.len() });
        }
        problem.policy.set_params(theta0)?;
        Stepper::new(cfg.sca.clone(), d0, theta0.clone())
    })();
    let mut stepper = match setup {
        Ok(s) => s,
        Err(source) => return Err(Aborted { log, source }),
    };

    let mut rng = rng::stream(cfg.sca.seed, 0);
    let mut s = problem.env.initial_state(&mut rng);
    let feature_dim = (problem.features)(&s).len();
    let mut critic = match CriticState::new(feature_dim, cfg.beta_w, cfg.beta_v) {
        Ok(c) => c,
        Err(source) => return Err(Aborted { log, source }),
    };

    for k in 1..=cfg.sca.max_iter {
        let theta = stepper.theta.clone();
        let mut last = None;
        for _ in 0..cfg.n_actor {
            let a = problem.policy.sample_action(&s, &mut rng);
            let tr = problem.env.step(&s, &a, &mut rng);
            let obs = Observation { state: s, reward: tr.reward, cost: tr.cost, next: tr.next };
            critic = critic_update(&critic, problem.features.as_ref(), &obs);
            s = obs.next;
            last = Some((obs.state, a));
        }
        let (s_prev, a) = last.expect("n_actor is at least 1");
        let sample = actor_surrogate_inputs(&critic, &problem.policy, &s_prev, &a);
        let result = (|| {
            let (j, d, estimated) = match &problem.evaluator {
                Some(e) => {
                    let (j, d) = e(&theta)?;
                    (j, d, false)
                }
                None => (sample.j_value, sample.d_value, true),
            };
            let outcome = stepper.advance(&sample)?;
            problem.policy.set_params(&outcome.next_theta)?;
            Ok::<_, Error>((j, d, estimated, outcome))
        })();
        let (j, d, estimated, outcome) = match result {
            Ok(r) => r,
            Err(source) => return Err(Aborted { log, source }),
        };
        log.records.push(IterateRecord {
            k,
            theta,
            j_curvature: stepper.surrogates.j_bar.c,
            j,
            d,
            estimated,
            feasible: d <= d0 + cfg.sca.feas_tol,
            alpha: outcome.solution.alpha,
            lambda: outcome.solution.lambda,
            status: outcome.solution.status,
            eta: outcome.step.eta,
            rho: outcome.step.rho,
        });
        log.final_theta = outcome.next_theta;
    }
    Ok(log)
}

/// Exact long-run averages of a tabular CMDP under a fixed policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageRewardEvaluation {
    /// Negative average reward.
    pub j: f64,
    pub d: f64,
    pub j_grad: Vector,
    pub d_grad: Vector,
    pub stationary: Vector,
    /// Differential (relative) values with `stationaryᵀh = 0`.
    pub h_reward: Vector,
    pub h_cost: Vector,
}

/// Stationary distribution and Poisson-equation solves; assumes the chain
/// induced by the policy is irreducible.
pub fn average_reward_tabular<P: DiscretePolicy>(env: &TabularCmdp, policy: &P) -> Result<AverageRewardEvaluation> {
    let (ns, na) = (env.n_states, env.n_actions);
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
    let singular = |what: &str| Error::SingularSystem(what.into());

    // (I - P_πᵀ) d = 0 with the last equation replaced by Σ d = 1.
    let mut a = Matrix::identity(ns, ns) - p_pi.transpose();
    a.row_mut(ns - 1).fill(1.0);
    let mut e_last = Vector::zeros(ns);
    e_last[ns - 1] = 1.0;
    let stationary = a.lu().solve(&e_last).ok_or_else(|| singular("stationary distribution"))?;

    let rho_r = stationary.dot(&r_pi);
    let rho_d = stationary.dot(&d_pi);
    // (I - P_π + 1 dᵀ) h = r_π - ρ1 has the unique solution with dᵀh = 0.
    let ones = Vector::from_element(ns, 1.0);
    let fundamental = Matrix::identity(ns, ns) - &p_pi + &ones * stationary.transpose();
    let lu = fundamental.lu();
    let h_reward = lu.solve(&r_pi.add_scalar(-rho_r)).ok_or_else(|| singular("Poisson equation"))?;
    let h_cost = lu.solve(&d_pi.add_scalar(-rho_d)).ok_or_else(|| singular("Poisson equation"))?;

    let next = |h: &Vector, s: usize, a: usize| -> f64 { (0..ns).map(|s2| env.transitions[(s * na + a, s2)] * h[s2]).sum() };
    let mut j_grad = Vector::zeros(policy.dim());
    let mut d_grad = Vector::zeros(policy.dim());
    for s in 0..ns {
        for a in 0..na {
            let weight = stationary[s] * probs[s][a];
            if weight == 0.0 {
                continue;
            }
            let score = policy.grad_log_prob(&s, &a);
            let q_r = env.reward[(s, a)] - rho_r + next(&h_reward, s, a);
            let q_d = env.cost[(s, a)] - rho_d + next(&h_cost, s, a);
            j_grad -= &score * (weight * q_r);
            d_grad += &score * (weight * q_d);
        }
    }
    Ok(AverageRewardEvaluation { j: -rho_r, d: rho_d, j_grad, d_grad, stationary, h_reward, h_cost })
}
