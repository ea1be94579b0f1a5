use crate::compare::{compare, replicates_csv, summary_csv, summary_table};
use crate::config::{replicate_seed, RunConfig};
use crate::csv_log::write_log;
use crate::error::{CliError, Result};
use crate::problem_file::{generate_coupled, generate_lqr, generate_tabular, minimal_cost, read_problem, write_problem, Problem};
use crate::solve::{check_supported, problem_metadata, run_once};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmdp_sca::lqr::NoiseMode;
use cmdp_sca::mdp_oracle::{exact_tabular, SoftmaxPolicy};
use cmdp_sca::Vector;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "cmdp-sca", version, about = "Constrained policy optimization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a problem instance and write it as a problem file.
    Generate(GenerateArgs),
    /// Evaluate a problem file and check the instance conditions.
    Verify(VerifyArgs),
    /// Run one solver and write its iterate log as CSV.
    Run(RunArgs),
    /// Run the surrogate and primal-dual solvers on the same seeds and summarize.
    Compare(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Lqr,
    Tabular,
    Coupled,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "lqr")]
    pub kind: Kind,
    /// State dimension (lqr), number of states (tabular) or agents (coupled).
    #[arg(long)]
    pub n: usize,
    /// Input dimension (lqr), number of actions (tabular) or block size (coupled).
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// random_init | noisy_dynamics (lqr only).
    #[arg(long, default_value = "random_init")]
    pub mode: String,
    /// Discount factor (tabular only).
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Pairwise interaction weight (coupled only).
    #[arg(long, default_value_t = 0.0)]
    pub coupling: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sca | lagrangian | actor_critic | distributed (ignored by compare).
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Relative excess over the minimum for the approximate minimum.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(&read_text(path)?, &path.display().to_string())?;
        }
        if let Some(s) = &self.solver {
            cfg.solver = s.parse().map_err(CliError::Usage)?;
        }
        if let Some(v) = self.iters {
            cfg.iters = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => out.write_all(text.as_bytes()).map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

/// `dir/stem.ext` becomes `dir/stem{suffix}.ext`.
pub fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

pub fn generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let problem = match args.kind {
        Kind::Lqr => {
            let mode = NoiseMode::parse(&args.mode)
                .ok_or_else(|| CliError::Usage(format!("unknown mode `{}` (random_init | noisy_dynamics)", args.mode)))?;
            Problem::Lqr(generate_lqr(args.n, args.m, args.seed, mode)?)
        }
        Kind::Tabular => {
            if !(0.0..1.0).contains(&args.gamma) {
                return Err(CliError::Usage(format!("gamma must lie in [0, 1), got {}", args.gamma)));
            }
            Problem::Tabular(generate_tabular(args.n, args.m, args.gamma, args.seed)?)
        }
        Kind::Coupled => Problem::Coupled(generate_coupled(args.n, args.m, args.coupling, args.seed)?),
    };
    emit(out, args.out.as_deref(), &write_problem(&problem))
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Report lines and whether every instance condition holds.
pub fn verify_report(problem: &Problem) -> Result<(String, bool)> {
    let mut r = String::new();
    let _ = writeln!(r, "kind {}", problem.kind());
    let ok = match problem {
        Problem::Lqr(p) => {
            let rep = p.check_conditions()?;
            let _ = writeln!(r, "n {}\nm {}\nmode {}", p.n(), p.m(), p.mode.as_str());
            let _ = writeln!(r, "d0 {:.16e}", rep.d0);
            let _ = writeln!(r, "j_unconstrained {:.16e}", rep.j_unconstrained);
            let _ = writeln!(r, "d_at_unconstrained {:.16e}", rep.d_at_unconstrained);
            let _ = writeln!(r, "d_min {:.16e}", rep.d_min);
            let _ = writeln!(r, "d_zero_gain {:.16e}", rep.d_zero);
            let _ = writeln!(r, "check feasible (d_min < d0): {}", yes_no(rep.feasible()));
            let _ = writeln!(r, "check nontrivial (d0 < d_at_unconstrained): {}", yes_no(rep.nontrivial()));
            let _ = writeln!(r, "check zero gain infeasible (d0 < d_zero_gain): {}", yes_no(rep.zero_gain_infeasible()));
            rep.all_hold()
        }
        Problem::Tabular(t) => {
            let d_min = minimal_cost(&t.env);
            let uniform = exact_tabular(&t.env, &SoftmaxPolicy::uniform(t.env.n_states, t.env.n_actions))?;
            let _ = writeln!(r, "states {}\nactions {}\ngamma {:e}", t.env.n_states, t.env.n_actions, t.env.gamma);
            let _ = writeln!(r, "d0 {:.16e}", t.d0);
            let _ = writeln!(r, "d_min {:.16e}", d_min);
            let _ = writeln!(r, "j_uniform {:.16e}", uniform.j);
            let _ = writeln!(r, "d_uniform {:.16e}", uniform.d);
            let feasible = d_min < t.d0;
            let _ = writeln!(r, "check feasible (d_min < d0): {}", yes_no(feasible));
            feasible
        }
        Problem::Coupled(c) => {
            let sys = &c.system;
            let at_zero = sys.exact_sample(&Vector::zeros(cmdp_sca::distributed::MultiAgentOracle::dim(sys)));
            let _ = writeln!(r, "agents {}\ncoupling {:e}\nnoise {:e}", sys.n_agents(), sys.coupling, sys.noise_std);
            for (i, (b, d)) in sys.budgets().iter().zip(&at_zero.d_values).enumerate() {
                let _ = writeln!(r, "agent {i} d0 {b:.16e} d_at_zero {d:.16e}");
            }
            // Every budget is positive and each agent's constraint is a ball
            // around its own center, so the instance is always feasible.
            let _ = writeln!(r, "check feasible (positive budgets): yes");
            true
        }
    };
    Ok((r, ok))
}

pub fn verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let problem = read_problem(&args.problem)?;
    let (report, ok) = verify_report(&problem)?;
    emit(out, args.out.as_deref(), &report)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{}: instance conditions do not hold", args.problem.display())))
    }
}

fn run_metadata(problem: &Problem, cfg: &RunConfig, replicate: usize, seed: u64) -> Result<Vec<(String, String)>> {
    let mut meta = vec![
        ("solver".to_string(), cfg.solver.to_string()),
        ("replicate".to_string(), replicate.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("iters".to_string(), cfg.iters.to_string()),
        ("tau".to_string(), format!("{:e}", cfg.tau)),
    ];
    meta.extend(problem_metadata(problem)?);
    Ok(meta)
}

pub fn run(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.config()?;
    if cfg.replicates > 1 && args.out.is_none() {
        return Err(CliError::Usage("--out is required with more than one replicate".into()));
    }
    let problem = read_problem(&args.problem)?;
    check_supported(&problem, &cfg, cfg.solver)?;
    let outcomes = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_once(&problem, &cfg, cfg.solver, replicate_seed(cfg.seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.iter().enumerate() {
        let mut meta = run_metadata(&problem, &cfg, r, outcome.seed)?;
        let status = match &outcome.error {
            None => "completed".to_string(),
            Some(e) => {
                failures.push(format!("replicate {r} aborted after {} iterations: {e}", outcome.log.len()));
                format!("aborted: {e}")
            }
        };
        meta.push(("status".into(), status));
        let text = write_log(&meta, &outcome.log);
        let path = match (&args.out, cfg.replicates) {
            (Some(p), 1) => Some(p.clone()),
            (Some(p), _) => Some(suffixed(p, &format!("_rep{r}"))),
            (None, _) => None,
        };
        emit(out, path.as_deref(), &text)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}

pub fn compare_command(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.config()?;
    let problem = read_problem(&args.problem)?;
    let summary = compare(&problem, &cfg)?;
    if let Some(path) = &args.out {
        write_file(path, &summary_csv(&summary))?;
        write_file(&suffixed(path, "_replicates"), &replicates_csv(&summary))?;
    }
    emit(out, None, &summary_table(&summary))
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Verify(a) => verify(a, out),
        Command::Run(a) => run(a, out),
        Command::Compare(a) => compare_command(a, out),
    }
}
