//! The two-state deterministic cycle `0 → 1 → 0`, where every quantity of the
//! average-reward problem can be written down by hand.

use cmdp_sca::actor_critic::{
    actor_surrogate_inputs, average_reward_tabular, critic_update, one_hot_features, ActorCriticConfig, ActorCriticProblem,
    CriticState, Observation,
};
use cmdp_sca::mdp_oracle::{sample_policy_gradient, DiscretePolicy, EstimatorScale, Policy, SoftmaxPolicy, TabularCmdp};
use cmdp_sca::sca::ScaConfig;
use cmdp_sca::{actor_critic, Matrix, SimRng, Vector};
use rand::SeedableRng;

/// Actions do not affect transitions; `reward[(s, a)]` may depend on both.
fn cycle(reward: [[f64; 2]; 2], cost: [[f64; 2]; 2]) -> TabularCmdp {
    let mut p = Matrix::zeros(4, 2);
    p[(0, 1)] = 1.0;
    p[(1, 1)] = 1.0;
    p[(2, 0)] = 1.0;
    p[(3, 0)] = 1.0;
    let r = Matrix::from_row_slice(2, 2, &[reward[0][0], reward[0][1], reward[1][0], reward[1][1]]);
    let d = Matrix::from_row_slice(2, 2, &[cost[0][0], cost[0][1], cost[1][0], cost[1][1]]);
    TabularCmdp::new(p, r, d, 0.9, Vector::from_vec(vec![1.0, 0.0])).unwrap()
}

fn step(env: &TabularCmdp, policy: &SoftmaxPolicy, s: usize, rng: &mut SimRng) -> (usize, f64, f64, usize) {
    let a = policy.sample_action(&s, rng);
    (a, env.reward[(s, a)], env.cost[(s, a)], 1 - s)
}

#[test]
fn td_critics_reach_the_hand_solved_fixed_point() {
    // Rewards (0, 2): J = 1 and h(1) - h(0) = 1 solve h(s) + J = r(s) + h(s').
    // Costs (3, 1): D = 2 and g(1) - g(0) = -1.
    let env = cycle([[0.0, 0.0], [2.0, 2.0]], [[3.0, 3.0], [1.0, 1.0]]);
    let policy = SoftmaxPolicy::uniform(2, 2);
    let features = one_hot_features(2);
    let mut critic = CriticState::new(2, 1e-3, 1e-3).unwrap();
    let mut rng = SimRng::seed_from_u64(1);
    let mut s = 0;
    for _ in 0..200_000 {
        let (_, r, d, next) = step(&env, &policy, s, &mut rng);
        critic = critic_update(&critic, features.as_ref(), &Observation { state: s, reward: r, cost: d, next });
        s = next;
    }
    assert!((critic.j_avg - 1.0).abs() < 1e-3, "J {}", critic.j_avg);
    assert!((critic.d_avg - 2.0).abs() < 1e-3, "D {}", critic.d_avg);
    assert!((critic.w[1] - critic.w[0] - 1.0).abs() < 1e-3, "w {:?}", critic.w);
    assert!((critic.v[1] - critic.v[0] + 1.0).abs() < 1e-3, "v {:?}", critic.v);
    // A constant step leaves a period-two limit cycle of size O(β) in the
    // trackers, so single TD errors are only small relative to 2β while their
    // average over the cycle vanishes.
    let mut mean = (0.0, 0.0);
    for state in 0..2 {
        let (_, r, d, next) = step(&env, &policy, state, &mut rng);
        let probe = critic_update(&critic, features.as_ref(), &Observation { state, reward: r, cost: d, next });
        assert!(probe.delta_j.abs() < 2e-3 && probe.delta_d.abs() < 2e-3, "state {state}: {probe:?}");
        mean.0 += 0.5 * probe.delta_j;
        mean.1 += 0.5 * probe.delta_d;
    }
    assert!(mean.0.abs() < 1e-3 && mean.1.abs() < 1e-3, "{mean:?}");

    let exact = average_reward_tabular(&env, &policy).unwrap();
    assert!((exact.j + 1.0).abs() < 1e-12 && (exact.d - 2.0).abs() < 1e-12);
    assert!((exact.h_reward[1] - exact.h_reward[0] - 1.0).abs() < 1e-12);
}

fn converged_critic(env: &TabularCmdp, policy: &SoftmaxPolicy, rng: &mut SimRng) -> CriticState {
    let features = one_hot_features(2);
    let mut critic = CriticState::new(2, 1e-3, 1e-3).unwrap();
    let mut s = 0;
    for _ in 0..200_000 {
        let (_, r, d, next) = step(env, policy, s, rng);
        critic = critic_update(&critic, features.as_ref(), &Observation { state: s, reward: r, cost: d, next });
        s = next;
    }
    critic
}

/// `∂/∂θ[s, b]` of `-½ Σ_s Σ_a π(a|s) r(s, a)` for the softmax policy.
fn hand_gradient(policy: &SoftmaxPolicy, reward: &Matrix) -> Vector {
    let mut g = Vector::zeros(4);
    for s in 0..2 {
        let p = policy.action_probs(s);
        let mean = p[0] * reward[(s, 0)] + p[1] * reward[(s, 1)];
        for b in 0..2 {
            g[2 * s + b] = -0.5 * p[b] * (reward[(s, b)] - mean);
        }
    }
    g
}

#[test]
fn td_gradient_is_unbiased_and_beats_monte_carlo_variance() {
    let env = cycle([[0.0, 1.0], [3.0, 2.0]], [[1.0, 0.0], [0.5, 2.0]]);
    let policy = SoftmaxPolicy::new(2, 2, Vector::from_vec(vec![0.3, -0.2, 0.1, 0.4])).unwrap();
    let exact = average_reward_tabular(&env, &policy).unwrap();
    let hand = hand_gradient(&policy, &env.reward);
    assert!((&exact.j_grad - &hand).amax() < 1e-12);

    let mut rng = SimRng::seed_from_u64(2);
    let critic = converged_critic(&env, &policy, &mut rng);
    let features = one_hot_features(2);

    let n = 100_000;
    let mut td = Vec::with_capacity(n);
    let mut s = 0;
    for _ in 0..n {
        let (a, r, d, next) = step(&env, &policy, s, &mut rng);
        // Frozen critic: only the TD errors of this transition are used.
        let probe = critic_update(&critic, features.as_ref(), &Observation { state: s, reward: r, cost: d, next });
        td.push(actor_surrogate_inputs(&probe, &policy, &s, &a).j_grad);
        s = next;
    }
    let mut mc = Vec::with_capacity(n);
    for _ in 0..n {
        mc.push(sample_policy_gradient(&env, &policy, env.gamma, EstimatorScale::Rescaled, None, &mut rng).j_grad);
    }

    let stats = |xs: &[Vector]| {
        let mean = xs.iter().fold(Vector::zeros(4), |acc, x| acc + x) / xs.len() as f64;
        let var = xs.iter().fold(Vector::zeros(4), |acc, x| acc + (x - &mean).map(|e| e * e)) / (xs.len() - 1) as f64;
        (mean, var)
    };
    let (td_mean, td_var) = stats(&td);
    let (_, mc_var) = stats(&mc);
    for i in 0..4 {
        let se = (td_var[i] / n as f64).sqrt();
        assert!((td_mean[i] - hand[i]).abs() <= 3.0 * se, "component {i}: {} vs {} (se {se})", td_mean[i], hand[i]);
    }
    assert!(td_var.sum() < mc_var.sum(), "TD {} vs MC {}", td_var.sum(), mc_var.sum());
}

#[test]
fn online_run_moves_toward_higher_reward_within_budget() {
    // Action 1 pays more everywhere but costs more in state 0.
    let env = cycle([[0.0, 1.0], [0.0, 1.0]], [[0.0, 1.0], [0.0, 0.0]]);
    let mut problem = ActorCriticProblem::tabular(env.clone(), 0.3).unwrap();
    let cfg = ActorCriticConfig {
        sca: ScaConfig { tau: 5.0, max_iter: 20_000, seed: 3, ..Default::default() },
        beta_w: 0.01,
        beta_v: 0.01,
        n_actor: 1,
    };
    let log = actor_critic::run(&mut problem, &cfg, &Vector::zeros(4)).unwrap();
    let policy = SoftmaxPolicy::new(2, 2, log.final_theta.clone()).unwrap();
    let exact = average_reward_tabular(&env, &policy).unwrap();
    let start = average_reward_tabular(&env, &SoftmaxPolicy::uniform(2, 2)).unwrap();
    assert!(exact.j < start.j, "objective {} did not improve on {}", exact.j, start.j);
    assert!(exact.d <= 0.3 + 0.05, "cost {}", exact.d);
}
