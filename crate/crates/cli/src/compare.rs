//! Replicated SCA versus primal-dual comparison.
//!
//! Per replicate the minimum is the lowest exactly evaluated objective over
//! iterates flagged feasible, and its iteration is the first one attaining
//! it. The approximate minimum is the first feasible iterate whose objective
//! exceeds the minimum by less than `threshold` (relative).

use crate::config::{replicate_seed, RunConfig, Solver};
use crate::csv_log::RunLog;
use crate::error::{CliError, Result};
use crate::problem_file::Problem;
use crate::solve::{check_supported, run_once, RunOutcome};
use cmdp_sca::sca::IterateLog;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateStats {
    pub min_value: f64,
    pub min_iter: usize,
    pub approx_value: f64,
    pub approx_iter: usize,
}

/// `None` when no logged iterate is feasible.
pub fn replicate_stats(log: &IterateLog, threshold: f64) -> Option<ReplicateStats> {
    let feasible = || log.records.iter().filter(|r| r.feasible && r.j.is_finite());
    let best = feasible().min_by(|a, b| a.j.total_cmp(&b.j))?;
    let min_value = best.j;
    // `min_by` keeps the first of equal elements, so this is the first hit.
    let min_iter = best.k;
    let cutoff = min_value + threshold * min_value.abs();
    let approx = feasible().find(|r| r.j <= cutoff).expect("the minimizer itself qualifies");
    Some(ReplicateStats { min_value, min_iter, approx_value: approx.j, approx_iter: approx.k })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; NaN below two values.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / n };
        let sd = if xs.len() < 2 { f64::NAN } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    /// `Err` holds the reason the replicate is excluded from the statistics.
    pub stats: std::result::Result<ReplicateStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub solver: Solver,
    pub replicates: Vec<ReplicateResult>,
    pub min_value: MeanSd,
    pub min_iter: MeanSd,
    pub approx_value: MeanSd,
    pub approx_iter: MeanSd,
}

impl MethodSummary {
    pub fn failed(&self) -> usize {
        self.replicates.iter().filter(|r| r.stats.is_err()).count()
    }

    fn from_results(solver: Solver, replicates: Vec<ReplicateResult>) -> Self {
        let ok: Vec<ReplicateStats> = replicates.iter().filter_map(|r| r.stats.as_ref().ok().copied()).collect();
        let col = |f: fn(&ReplicateStats) -> f64| MeanSd::of(&ok.iter().map(f).collect::<Vec<_>>());
        Self {
            solver,
            min_value: col(|s| s.min_value),
            min_iter: col(|s| s.min_iter as f64),
            approx_value: col(|s| s.approx_value),
            approx_iter: col(|s| s.approx_iter as f64),
            replicates,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub threshold: f64,
    pub methods: Vec<MethodSummary>,
}

impl ComparisonSummary {
    pub fn method(&self, solver: Solver) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.solver == solver)
    }
}

fn replicate_result(replicate: usize, outcome: RunOutcome, threshold: f64) -> ReplicateResult {
    let stats = match (&outcome.log, &outcome.error) {
        (_, Some(e)) => Err(format!("aborted: {e}")),
        (RunLog::Single(log), None) => replicate_stats(log, threshold).ok_or_else(|| "no feasible iterate".to_string()),
        (RunLog::Multi(_), None) => Err("multi-agent log".to_string()),
    };
    ReplicateResult { replicate, seed: outcome.seed, stats }
}

/// Runs both methods on the same seeds. Replicates run in parallel and are
/// collected in index order.
pub fn compare(problem: &Problem, cfg: &RunConfig) -> Result<ComparisonSummary> {
    if cfg.replicates < 2 {
        return Err(CliError::Usage(format!("compare needs at least 2 replicates, got {}", cfg.replicates)));
    }
    let solvers = [Solver::Sca, Solver::Lagrangian];
    for solver in solvers {
        check_supported(problem, cfg, solver)?;
    }
    let jobs: Vec<(Solver, usize)> = solvers.iter().flat_map(|&s| (0..cfg.replicates).map(move |r| (s, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(solver, r)| run_once(problem, cfg, solver, replicate_seed(cfg.seed, r)).map(|o| replicate_result(r, o, cfg.threshold)))
        .collect::<Result<Vec<_>>>()?;
    let mut results = results.into_iter();
    let methods = solvers.iter().map(|&s| MethodSummary::from_results(s, results.by_ref().take(cfg.replicates).collect())).collect();
    Ok(ComparisonSummary { threshold: cfg.threshold, methods })
}

pub const SUMMARY_COLUMNS: &str =
    "method,replicates,failed,threshold,min_value_mean,min_value_sd,min_iter_mean,min_iter_sd,approx_value_mean,approx_value_sd,approx_iter_mean,approx_iter_sd";
pub const REPLICATE_COLUMNS: &str = "method,replicate,seed,status,min_value,min_iter,approx_value,approx_iter";

pub fn summary_csv(summary: &ComparisonSummary) -> String {
    let mut out = format!("{SUMMARY_COLUMNS}\n");
    for m in &summary.methods {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            m.solver,
            m.replicates.len(),
            m.failed(),
            summary.threshold,
            m.min_value.mean,
            m.min_value.sd,
            m.min_iter.mean,
            m.min_iter.sd,
            m.approx_value.mean,
            m.approx_value.sd,
            m.approx_iter.mean,
            m.approx_iter.sd
        );
    }
    out
}

pub fn replicates_csv(summary: &ComparisonSummary) -> String {
    let mut out = format!("{REPLICATE_COLUMNS}\n");
    for m in &summary.methods {
        for r in &m.replicates {
            match &r.stats {
                Ok(s) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},ok,{:.16e},{},{:.16e},{}",
                        m.solver, r.replicate, r.seed, s.min_value, s.min_iter, s.approx_value, s.approx_iter
                    );
                }
                Err(reason) => {
                    let reason = reason.replace([',', '\n'], ";");
                    let _ = writeln!(out, "{},{},{},failed: {reason},,,,", m.solver, r.replicate, r.seed);
                }
            }
        }
    }
    out
}

fn pm(x: MeanSd, precision: usize) -> String {
    format!("{:.p$} ± {:.p$}", x.mean, x.sd, p = precision)
}

/// Fixed-width table for the terminal.
pub fn summary_table(summary: &ComparisonSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "approximate minimum: first feasible iterate within {:.4}% of the minimum", 100.0 * summary.threshold);
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>6}  {:>24}  {:>20}  {:>24}  {:>20}",
        "method", "reps", "failed", "min value", "# iterations", "approx. min value", "approx. # iterations"
    );
    for m in &summary.methods {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>6}  {:>24}  {:>20}  {:>24}  {:>20}",
            m.solver.as_str(),
            m.replicates.len(),
            m.failed(),
            pm(m.min_value, 6),
            pm(m.min_iter, 1),
            pm(m.approx_value, 6),
            pm(m.approx_iter, 1)
        );
    }
    for m in &summary.methods {
        for r in &m.replicates {
            if let Err(reason) = &r.stats {
                let _ = writeln!(out, "{} replicate {} (seed {}) failed: {reason}", m.solver, r.replicate, r.seed);
            }
        }
    }
    out
}
