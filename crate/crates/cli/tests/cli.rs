use cmdp_sca_cli::compare::{compare, replicate_stats};
use cmdp_sca_cli::config::{RunConfig, Solver};
use cmdp_sca_cli::csv_log::{read_log, RunLog};
use cmdp_sca_cli::problem_file::{parse_problem, read_problem, write_problem, Problem};
use cmdp_sca_cli::solve::run_once;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdp-sca"))
}

fn cmd(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["generate"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", path_arg(&out)]);
    let o = cmd(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generated_problem_round_trips_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.txt", &["--n", "15", "--m", "8", "--seed", "1"]);
    let b = generate(dir.path(), "b.txt", &["--n", "15", "--m", "8", "--seed", "1"]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let parsed = parse_problem(&text, "a").unwrap();
    assert_eq!(write_problem(&parsed), text);
    let Problem::Lqr(p) = &parsed else { panic!("expected an lqr problem") };
    assert_eq!((p.n(), p.m(), p.seed), (15, 8, Some(1)));

    let o = cmd(&["verify", "--problem", path_arg(&a)]);
    assert!(o.status.success());
    let report = String::from_utf8(o.stdout).unwrap();
    assert_eq!(report.matches(": yes").count(), 3, "{report}");
}

#[test]
fn failed_instance_conditions_exit_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = generate(dir.path(), "p.txt", &["--n", "2", "--m", "1"]);
    let Problem::Lqr(mut p) = read_problem(&path).unwrap() else { unreachable!() };
    // A budget above the unconstrained optimum's cost makes the constraint inactive.
    p.d0 = 1e6;
    std::fs::write(&path, write_problem(&Problem::Lqr(p))).unwrap();
    let o = cmd(&["verify", "--problem", path_arg(&path)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("nontrivial (d0 < d_at_unconstrained): no"));
}

#[test]
fn zero_iterations_give_a_header_only_log() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--n", "2", "--m", "1"]);
    let o = cmd(&["run", "--problem", path_arg(&p), "--iters", "0"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let log = read_log(&text, "stdout").unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(text.lines().last(), Some("k,J,D,feasible,alpha,eta,rho,theta_norm"));
    assert!(text.lines().rev().skip(1).all(|l| l.starts_with("# ")));
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--n", "2", "--m", "1"]);
    let p = path_arg(&p);
    let bad_config = dir.path().join("bad.cfg");
    std::fs::write(&bad_config, "tau = 1\nwarp = 9\n").unwrap();
    let usage: [&[&str]; 6] = [
        &["run", "--problem", p, "--unknown-flag"],
        &["run", "--problem", p, "--solver", "newton"],
        &["run", "--problem", p, "--config", path_arg(&bad_config)],
        &["run", "--problem", p, "--replicates", "2"],
        &["compare", "--problem", p, "--replicates", "1"],
        &["frobnicate"],
    ];
    for args in usage {
        assert_eq!(cmd(args).status.code(), Some(1), "{args:?}");
    }
    let garbled = dir.path().join("garbled.txt");
    std::fs::write(&garbled, "cmdp-sca-problem 1\nkind lqr\nmode sideways\n").unwrap();
    let absent = dir.path().join("absent.txt");
    let runtime: [&[&str]; 2] = [&["run", "--problem", path_arg(&absent)], &["verify", "--problem", path_arg(&garbled)]];
    for args in runtime {
        assert_eq!(cmd(args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(cmd(&["--help"]).status.code(), Some(0));
}

#[test]
fn replicates_write_one_log_each_in_index_order() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--kind", "tabular", "--n", "3", "--m", "2", "--seed", "3"]);
    let out = dir.path().join("log.csv");
    let o = cmd(&["run", "--problem", path_arg(&p), "--iters", "50", "--replicates", "3", "--seed", "9", "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut seeds = Vec::new();
    for r in 0..3 {
        let text = std::fs::read_to_string(dir.path().join(format!("log_rep{r}.csv"))).unwrap();
        let log = read_log(&text, "rep").unwrap();
        assert_eq!(log.meta("replicate"), Some(r.to_string().as_str()));
        assert_eq!(log.rows.len(), 50);
        seeds.push(log.meta("seed").unwrap().to_string());
    }
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 3);
    assert!(!out.exists());
}

#[test]
fn every_solver_runs_on_a_tabular_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--kind", "tabular", "--n", "3", "--m", "2", "--seed", "1"]);
    for solver in ["sca", "lagrangian", "actor_critic", "distributed"] {
        let o = cmd(&["run", "--problem", path_arg(&p), "--solver", solver, "--iters", "100"]);
        assert!(o.status.success(), "{solver}: {}", String::from_utf8_lossy(&o.stderr));
        let log = read_log(&String::from_utf8(o.stdout).unwrap(), solver).unwrap();
        assert_eq!(log.rows.len(), 100);
        assert_eq!(log.multi_agent, solver == "distributed");
        assert_eq!(log.meta("solver"), Some(solver));
    }
}

#[test]
fn coupled_runs_log_one_row_per_agent() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--kind", "coupled", "--n", "3", "--m", "2", "--coupling", "0.3", "--seed", "4"]);
    let o = cmd(&["run", "--problem", path_arg(&p), "--solver", "distributed", "--iters", "4000"]);
    assert!(o.status.success());
    let log = read_log(&String::from_utf8(o.stdout).unwrap(), "coupled").unwrap();
    assert_eq!(log.rows.len(), 3 * 4000);
    let budgets: Vec<f64> = (0..3).map(|i| log.meta(&format!("d0_agent{i}")).unwrap().parse().unwrap()).collect();
    for row in &log.rows[log.rows.len() - 3..] {
        let b = budgets[row.agent.unwrap()];
        assert!(row.d <= b + 1e-3, "agent {:?}: {} vs {b}", row.agent, row.d);
    }
    assert_eq!(cmd(&["run", "--problem", path_arg(&p), "--solver", "sca"]).status.code(), Some(1));
}

#[test]
fn desk_scale_run_becomes_and_stays_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "p.txt", &["--n", "6", "--m", "3", "--seed", "1"]);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "oracle = exact\nnoise = 1e-3\ntau = 60\n").unwrap();
    let out = dir.path().join("log.csv");
    let o = cmd(&["run", "--problem", path_arg(&p), "--config", path_arg(&cfg), "--iters", "5000", "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_log(&std::fs::read_to_string(&out).unwrap(), "log").unwrap();
    let d0: f64 = log.meta("d0").unwrap().parse().unwrap();
    let j_star: f64 = log.meta("j_unconstrained").unwrap().parse().unwrap();
    assert!(log.rows[0].d > d0, "the zero gain starts infeasible");
    assert!(log.rows.iter().any(|r| r.d <= d0));
    for r in &log.rows[3750..] {
        assert!(r.d <= d0 + 1e-3, "k {}: D {} vs D0 {d0}", r.k, r.d);
    }
    assert!(log.rows.iter().all(|r| r.j >= j_star - 1e-6));
}

#[test]
fn both_methods_find_the_same_minimum_on_a_deterministic_toy() {
    let dir = tempfile::tempdir().unwrap();
    let p = read_problem(&generate(dir.path(), "p.txt", &["--n", "2", "--m", "1", "--seed", "0"])).unwrap();
    let mut cfg = RunConfig::default();
    cfg.apply_file("oracle = exact\nfeas_tol = 1e-6\nlag_decay = false\nlag_eta_theta = 2e-2\nlag_eta_lambda = 5e-2\n", "toy").unwrap();
    cfg.iters = 20_000;
    cfg.replicates = 2;
    let summary = compare(&p, &cfg).unwrap();
    let sca = summary.method(Solver::Sca).unwrap();
    let lag = summary.method(Solver::Lagrangian).unwrap();
    assert_eq!(sca.failed() + lag.failed(), 0);
    assert!((sca.min_value.mean - lag.min_value.mean).abs() <= 1e-3, "{} vs {}", sca.min_value.mean, lag.min_value.mean);
    // Without sampling noise the replicates coincide.
    assert_eq!(sca.min_value.sd, 0.0);

    let one = run_once(&p, &cfg, Solver::Sca, 5).unwrap();
    let RunLog::Single(log) = &one.log else { panic!("single-agent log expected") };
    let stats = replicate_stats(log, cfg.threshold).unwrap();
    assert!(stats.approx_iter <= stats.min_iter);
}
