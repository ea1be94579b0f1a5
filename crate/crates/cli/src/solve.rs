//! Builds the oracle for a problem file and runs one solver replicate.

use crate::config::{OracleChoice, RunConfig, Solver};
use crate::csv_log::RunLog;
use crate::error::{CliError, Result};
use crate::problem_file::Problem;
use cmdp_sca::actor_critic::{self, ActorCriticProblem};
use cmdp_sca::distributed::{self, MultiAgentOracle, ParallelOracle, SingleAgent};
use cmdp_sca::lqr::{LqrOracle, LqrOracleKind};
use cmdp_sca::mdp_oracle::MdpOracle;
use cmdp_sca::sca::{self, Aborted, ConstrainedOracle};
use cmdp_sca::{lagrangian, Vector};

/// A finished or aborted run; aborted runs keep the iterations completed so far.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub log: RunLog,
    pub error: Option<cmdp_sca::Error>,
}

/// Rejects solver and problem combinations that have no meaning.
pub fn check_supported(problem: &Problem, cfg: &RunConfig, solver: Solver) -> Result<()> {
    let unsupported = |what: &str| Err(CliError::Usage(format!("solver `{solver}` does not apply to {what} problems")));
    match (problem, solver) {
        (Problem::Coupled(_), Solver::Sca | Solver::Lagrangian | Solver::ActorCritic) => unsupported("coupled")?,
        (Problem::Lqr(_), Solver::ActorCritic) => unsupported("lqr")?,
        _ => {}
    }
    if cfg.oracle == OracleChoice::Exact && !matches!(problem, Problem::Lqr(_)) {
        return Err(CliError::Usage("oracle = exact is only available for lqr problems".into()));
    }
    if solver == Solver::ActorCritic && cfg.workers > 1 {
        return Err(CliError::Usage("actor_critic runs a single trajectory; workers must be 1".into()));
    }
    if matches!(problem, Problem::Coupled(_)) && cfg.workers > 1 {
        return Err(CliError::Usage("coupled problems are sampled centrally; workers must be 1".into()));
    }
    Ok(())
}

fn single(result: std::result::Result<cmdp_sca::sca::IterateLog, Aborted>, seed: u64) -> RunOutcome {
    match result {
        Ok(log) => RunOutcome { seed, log: RunLog::Single(log), error: None },
        Err(Aborted { log, source }) => RunOutcome { seed, log: RunLog::Single(log), error: Some(source) },
    }
}

fn multi<M: MultiAgentOracle>(oracle: &mut M, cfg: &RunConfig, seed: u64) -> RunOutcome {
    let mut sca_cfg = cfg.sca(seed);
    sca_cfg.bounds = cfg.bounds(oracle.dim());
    let theta0 = Vector::zeros(oracle.dim());
    match distributed::run(oracle, &sca_cfg, &theta0) {
        Ok(log) => RunOutcome { seed, log: RunLog::Multi(log), error: None },
        Err(a) => RunOutcome { seed, log: RunLog::Multi(a.log), error: Some(a.source) },
    }
}

fn dispatch<O: ConstrainedOracle>(mut oracle: O, cfg: &RunConfig, solver: Solver, seed: u64) -> RunOutcome {
    let dim = oracle.dim();
    let theta0 = Vector::zeros(dim);
    match solver {
        Solver::Sca => {
            let mut c = cfg.sca(seed);
            c.bounds = cfg.bounds(dim);
            single(sca::run(&mut oracle, &c, &theta0), seed)
        }
        Solver::Lagrangian => {
            let mut c = cfg.lagrangian(seed);
            c.bounds = cfg.bounds(dim);
            single(lagrangian::run(&mut oracle, &c, &theta0), seed)
        }
        Solver::Distributed => multi(&mut SingleAgent::new(oracle), cfg, seed),
        Solver::ActorCritic => {
            unreachable!("actor_critic is dispatched before oracle construction")
        }
    }
}

fn with_workers<O: ConstrainedOracle + Clone + Send>(oracle: O, cfg: &RunConfig, solver: Solver, seed: u64) -> Result<RunOutcome> {
    if cfg.workers > 1 {
        Ok(dispatch(ParallelOracle::replicate(oracle, cfg.workers, seed)?, cfg, solver, seed))
    } else {
        Ok(dispatch(oracle, cfg, solver, seed))
    }
}

/// Runs `solver` from the zero parameter with solver seed `seed`.
pub fn run_once(problem: &Problem, cfg: &RunConfig, solver: Solver, seed: u64) -> Result<RunOutcome> {
    check_supported(problem, cfg, solver)?;
    match problem {
        Problem::Lqr(p) => {
            let kind = match cfg.oracle {
                OracleChoice::Sampled => LqrOracleKind::Sampled,
                OracleChoice::Exact => LqrOracleKind::Exact { noise_std: cfg.noise },
            };
            with_workers(LqrOracle::new(p.clone(), kind), cfg, solver, seed)
        }
        Problem::Tabular(t) if solver == Solver::ActorCritic => {
            let mut ac = ActorCriticProblem::tabular(t.env.clone(), t.d0)?;
            let mut c = cfg.actor_critic(seed);
            c.sca.bounds = cfg.bounds(t.env.n_states * t.env.n_actions);
            let theta0 = Vector::zeros(t.env.n_states * t.env.n_actions);
            Ok(single(actor_critic::run(&mut ac, &c, &theta0), seed))
        }
        Problem::Tabular(t) => with_workers(MdpOracle::tabular(t.env.clone(), t.d0)?, cfg, solver, seed),
        Problem::Coupled(c) => Ok(multi(&mut c.system.clone(), cfg, seed)),
    }
}

/// Constraint budget(s) and reference values written as log metadata.
pub fn problem_metadata(problem: &Problem) -> Result<Vec<(String, String)>> {
    let mut meta = vec![("problem_kind".to_string(), problem.kind().to_string())];
    match problem {
        Problem::Lqr(p) => {
            meta.push(("d0".into(), format!("{:.16e}", p.d0)));
            meta.push(("j_unconstrained".into(), format!("{:.16e}", p.unconstrained_minimum()?)));
        }
        Problem::Tabular(t) => meta.push(("d0".into(), format!("{:.16e}", t.d0))),
        Problem::Coupled(c) => {
            for (i, b) in c.system.budgets().iter().enumerate() {
                meta.push((format!("d0_agent{i}"), format!("{b:.16e}")));
            }
        }
    }
    Ok(meta)
}
