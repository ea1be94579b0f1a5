use cmdp_sca::mdp_oracle::{
    exact_tabular, sample_geometric_horizon, sample_policy_gradient, sample_truncated_return, Baseline, EstimatorScale,
    MdpOracle, SoftmaxPolicy, TabularCmdp,
};
use cmdp_sca::sca::ConstrainedOracle;
use cmdp_sca::{SimRng, Vector};
use rand::{Rng, SeedableRng};

const SAMPLES: usize = 100_000;

/// Running mean and variance per component.
struct Moments {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self { n: 0, sum: vec![0.0; dim], sum_sq: vec![0.0; dim] }
    }

    fn push(&mut self, xs: &[f64]) {
        self.n += 1;
        for (i, &x) in xs.iter().enumerate() {
            self.sum[i] += x;
            self.sum_sq[i] += x * x;
        }
    }

    fn mean(&self, i: usize) -> f64 {
        self.sum[i] / self.n as f64
    }

    fn variance(&self, i: usize) -> f64 {
        let m = self.mean(i);
        (self.sum_sq[i] / self.n as f64 - m * m).max(0.0) * self.n as f64 / (self.n - 1) as f64
    }

    fn standard_error(&self, i: usize) -> f64 {
        (self.variance(i) / self.n as f64).sqrt()
    }

    fn total_variance(&self) -> f64 {
        (0..self.sum.len()).map(|i| self.variance(i)).sum()
    }
}

fn instance(seed: u64) -> (TabularCmdp, SoftmaxPolicy) {
    let env = TabularCmdp::random(3, 2, 0.8, seed).unwrap();
    let mut rng = SimRng::seed_from_u64(seed + 100);
    let theta = Vector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
    let policy = SoftmaxPolicy::new(3, 2, theta).unwrap();
    (env, policy)
}

fn within(m: &Moments, i: usize, exact: f64, label: &str) {
    let (mean, se) = (m.mean(i), m.standard_error(i));
    assert!((mean - exact).abs() <= 3.0 * se, "{label}: mean {mean} exact {exact} se {se}");
}

#[test]
fn truncated_estimators_are_unbiased_on_tabular_instances() {
    for seed in [1u64, 2, 3] {
        let (env, policy) = instance(seed);
        let exact = exact_tabular(&env, &policy).unwrap();
        let mut rng = SimRng::seed_from_u64(seed);

        let mut values = Moments::new(2);
        for _ in 0..SAMPLES {
            let r = sample_truncated_return(&env, &policy, env.gamma, EstimatorScale::Rescaled, &mut rng);
            values.push(&[r.j, r.d]);
        }
        within(&values, 0, exact.j, &format!("seed {seed} J"));
        within(&values, 1, exact.d, &format!("seed {seed} D"));

        let dim = exact.j_grad.len();
        let mut grads = Moments::new(2 * dim);
        for _ in 0..SAMPLES {
            let g = sample_policy_gradient(&env, &policy, env.gamma, EstimatorScale::Rescaled, None, &mut rng);
            let row: Vec<f64> = g.j_grad.iter().chain(g.d_grad.iter()).copied().collect();
            grads.push(&row);
        }
        for i in 0..dim {
            within(&grads, i, exact.j_grad[i], &format!("seed {seed} dJ[{i}]"));
            within(&grads, dim + i, exact.d_grad[i], &format!("seed {seed} dD[{i}]"));
        }
    }
}

#[test]
fn normalized_scale_targets_the_discount_weighted_values() {
    let (env, policy) = instance(4);
    let exact = exact_tabular(&env, &policy).unwrap();
    let mut rng = SimRng::seed_from_u64(4);
    let mut values = Moments::new(2);
    for _ in 0..SAMPLES {
        let r = sample_truncated_return(&env, &policy, env.gamma, EstimatorScale::Normalized, &mut rng);
        values.push(&[r.j, r.d]);
    }
    within(&values, 0, (1.0 - env.gamma) * exact.j, "normalized J");
    within(&values, 1, (1.0 - env.gamma) * exact.d, "normalized D");
}

#[test]
fn expected_rollout_length_matches_geometric_mean() {
    let mut rng = SimRng::seed_from_u64(5);
    for gamma in [0.5, 0.9, 0.95] {
        let total: usize = (0..SAMPLES).map(|_| sample_geometric_horizon(gamma, &mut rng) + 1).sum();
        let mean = total as f64 / SAMPLES as f64;
        let expected = 1.0 / (1.0 - gamma);
        assert!((mean - expected).abs() <= 0.01 * expected, "gamma {gamma}: {mean} vs {expected}");
    }
}

#[test]
fn value_baseline_reduces_gradient_variance() {
    let (env, policy) = instance(6);
    let exact = exact_tabular(&env, &policy).unwrap();
    let baseline = exact.baseline();
    let dim = exact.j_grad.len();
    let mut plain = Moments::new(2 * dim);
    let mut with = Moments::new(2 * dim);
    let mut rng = SimRng::seed_from_u64(6);
    for _ in 0..SAMPLES {
        let g = sample_policy_gradient(&env, &policy, env.gamma, EstimatorScale::Rescaled, None, &mut rng);
        plain.push(&g.j_grad.iter().chain(g.d_grad.iter()).copied().collect::<Vec<_>>());
        let b: &dyn Baseline<usize> = &baseline;
        let g = sample_policy_gradient(&env, &policy, env.gamma, EstimatorScale::Rescaled, Some(b), &mut rng);
        with.push(&g.j_grad.iter().chain(g.d_grad.iter()).copied().collect::<Vec<_>>());
    }
    assert!(with.total_variance() < plain.total_variance(), "{} vs {}", with.total_variance(), plain.total_variance());
    // The baseline must not bias the estimate.
    for i in 0..dim {
        within(&with, i, exact.j_grad[i], &format!("baseline dJ[{i}]"));
    }
}

#[test]
fn oracle_samples_match_the_standalone_estimators() {
    let (env, policy) = instance(7);
    let theta = policy.theta.clone();
    let mut oracle = MdpOracle::tabular(env.clone(), 1.0).unwrap();
    let mut a = SimRng::seed_from_u64(70);
    let mut b = SimRng::seed_from_u64(70);
    let s = oracle.sample(&theta, &mut a).unwrap();
    let ret = sample_truncated_return(&env, &policy, env.gamma, EstimatorScale::Rescaled, &mut b);
    let pg = sample_policy_gradient(&env, &policy, env.gamma, EstimatorScale::Rescaled, None, &mut b);
    assert_eq!((s.j_value, s.d_value), (ret.j, ret.d));
    assert_eq!((s.j_grad, s.d_grad), (pg.j_grad, pg.d_grad));
    let exact = exact_tabular(&env, &policy).unwrap();
    assert_eq!(oracle.exact(&theta).unwrap().unwrap(), (exact.j, exact.d));
}
