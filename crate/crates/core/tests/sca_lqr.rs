use cmdp_sca::lagrangian::{self, LagrangianConfig};
use cmdp_sca::lqr::{flatten_gain, generate_problem, LqrOracle, LqrOracleKind, NoiseMode};
use cmdp_sca::sca::{self, ScaConfig};
use cmdp_sca::Vector;

#[test]
fn small_constrained_lqr_reaches_a_feasible_stationary_point() {
    let p = generate_problem(2, 1, 0, NoiseMode::RandomInit).unwrap();
    let mut oracle = LqrOracle::new(p.clone(), LqrOracleKind::Exact { noise_std: 0.0 });
    let cfg = ScaConfig { tau: 1.0, max_iter: 20_000, seed: 0, ..Default::default() };
    let log = sca::run(&mut oracle, &cfg, &Vector::zeros(2)).unwrap();

    assert!(!log.records[0].feasible, "the zero gain starts infeasible");
    let f = oracle.gain(&log.final_theta).unwrap();
    let eval = p.exact_evaluation(&f).unwrap();
    assert!(eval.d <= p.d0 + 1e-6, "D - D0 = {}", eval.d - p.d0);
    let kkt = sca::kkt_residual(&flatten_gain(&eval.j_grad), &flatten_gain(&eval.d_grad), eval.d, p.d0, 1e-3);
    assert!(kkt.residual <= 1e-3, "{kkt:?}");
    assert!(kkt.lambda > 0.0, "the budget excludes the unconstrained optimum");
    assert!(eval.j >= p.unconstrained_minimum().unwrap() - 1e-9);

    // A long constant-step primal-dual run lands on the same constrained optimum.
    let lag_cfg = LagrangianConfig { eta_theta: 2e-2, eta_lambda: 5e-2, decay: false, max_iter: 30_000, ..Default::default() };
    let lag = lagrangian::run(&mut oracle, &lag_cfg, &log.final_theta).unwrap();
    let lag_eval = p.exact_evaluation(&oracle.gain(&lag.final_theta).unwrap()).unwrap();
    assert!((lag_eval.j - eval.j).abs() <= 1e-4 * eval.j, "{} vs {}", lag_eval.j, eval.j);
    assert!((lag.records.last().unwrap().lambda - kkt.lambda).abs() <= 1e-3 * kkt.lambda.max(1.0));
}
