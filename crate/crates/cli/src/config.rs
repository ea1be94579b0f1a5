//! Run settings: defaults, then an optional `key = value` file, then flags.

use crate::error::{CliError, Result};
use cmdp_sca::actor_critic::ActorCriticConfig;
use cmdp_sca::lagrangian::LagrangianConfig;
use cmdp_sca::sca::ScaConfig;
use cmdp_sca::subproblem::Bounds;
use rand::RngCore;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Sca,
    Lagrangian,
    ActorCritic,
    Distributed,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Sca => "sca",
            Solver::Lagrangian => "lagrangian",
            Solver::ActorCritic => "actor_critic",
            Solver::Distributed => "distributed",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sca" => Ok(Solver::Sca),
            "lagrangian" => Ok(Solver::Lagrangian),
            "actor_critic" => Ok(Solver::ActorCritic),
            "distributed" => Ok(Solver::Distributed),
            _ => Err(format!("unknown solver `{s}` (sca | lagrangian | actor_critic | distributed)")),
        }
    }
}

/// How LQR samples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleChoice {
    Sampled,
    /// Exact values and gradients plus Gaussian noise of size `noise`.
    Exact,
}

impl FromStr for OracleChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sampled" => Ok(OracleChoice::Sampled),
            "exact" => Ok(OracleChoice::Exact),
            _ => Err(format!("unknown oracle `{s}` (sampled | exact)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: Solver,
    pub iters: usize,
    pub tau: f64,
    pub seed: u64,
    pub replicates: usize,
    /// Relative excess over the minimum accepted as "approximately minimal".
    pub threshold: f64,
    pub eta_coeff: f64,
    pub eta_exp: f64,
    pub rho_coeff: f64,
    pub rho_exp: f64,
    /// Half width of the parameter box; `None` keeps the solver default.
    pub box_half_width: Option<f64>,
    pub feas_tol: f64,
    pub n_traj: usize,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub oracle: OracleChoice,
    pub noise: f64,
    pub workers: usize,
    pub lag_eta_theta: f64,
    pub lag_eta_lambda: f64,
    pub lag_decay: bool,
    pub lag_lambda0: f64,
    pub beta_w: f64,
    pub beta_v: f64,
    pub n_actor: usize,
}

pub const DEFAULT_THRESHOLD: f64 = 2e-4;

impl Default for RunConfig {
    fn default() -> Self {
        let sca = ScaConfig::default();
        let lag = LagrangianConfig::default();
        let ac = ActorCriticConfig::default();
        Self {
            solver: Solver::Sca,
            iters: sca.max_iter,
            tau: sca.tau,
            seed: 0,
            replicates: 1,
            threshold: DEFAULT_THRESHOLD,
            eta_coeff: sca.eta_coeff,
            eta_exp: sca.eta_exp,
            rho_coeff: sca.rho_coeff,
            rho_exp: sca.rho_exp,
            box_half_width: None,
            feas_tol: sca.feas_tol,
            n_traj: sca.n_traj,
            stall_tol: sca.stall_tol,
            stall_window: sca.stall_window,
            oracle: OracleChoice::Sampled,
            noise: 0.0,
            workers: 1,
            lag_eta_theta: lag.eta_theta,
            lag_eta_lambda: lag.eta_lambda,
            lag_decay: lag.decay,
            lag_lambda0: lag.lambda0,
            beta_w: ac.beta_w,
            beta_v: ac.beta_v,
            n_actor: ac.n_actor,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl RunConfig {
    pub const KEYS: [&'static str; 25] = [
        "solver",
        "iters",
        "tau",
        "seed",
        "replicates",
        "threshold",
        "eta_coeff",
        "eta_exp",
        "rho_coeff",
        "rho_exp",
        "box",
        "feas_tol",
        "n_traj",
        "stall_tol",
        "stall_window",
        "oracle",
        "noise",
        "workers",
        "lag_eta_theta",
        "lag_eta_lambda",
        "lag_decay",
        "lag_lambda0",
        "beta_w",
        "beta_v",
        "n_actor",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "solver" => self.solver = value.parse()?,
            "iters" => self.iters = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "replicates" => self.replicates = parse_value(key, value)?,
            "threshold" => self.threshold = parse_value(key, value)?,
            "eta_coeff" => self.eta_coeff = parse_value(key, value)?,
            "eta_exp" => self.eta_exp = parse_value(key, value)?,
            "rho_coeff" => self.rho_coeff = parse_value(key, value)?,
            "rho_exp" => self.rho_exp = parse_value(key, value)?,
            "box" => self.box_half_width = if value == "none" { None } else { Some(parse_value(key, value)?) },
            "feas_tol" => self.feas_tol = parse_value(key, value)?,
            "n_traj" => self.n_traj = parse_value(key, value)?,
            "stall_tol" => self.stall_tol = parse_value(key, value)?,
            "stall_window" => self.stall_window = parse_value(key, value)?,
            "oracle" => self.oracle = value.parse()?,
            "noise" => self.noise = parse_value(key, value)?,
            "workers" => self.workers = parse_value(key, value)?,
            "lag_eta_theta" => self.lag_eta_theta = parse_value(key, value)?,
            "lag_eta_lambda" => self.lag_eta_lambda = parse_value(key, value)?,
            "lag_decay" => self.lag_decay = parse_value(key, value)?,
            "lag_lambda0" => self.lag_lambda0 = parse_value(key, value)?,
            "beta_w" => self.beta_w = parse_value(key, value)?,
            "beta_v" => self.beta_v = parse_value(key, value)?,
            "n_actor" => self.n_actor = parse_value(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment line. Problems in
    /// the file are usage errors.
    pub fn apply_file(&mut self, text: &str, origin: &str) -> Result<()> {
        let err = |line: usize, m: String| CliError::Usage(format!("{origin}:{line}: {m}"));
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(i + 1, format!("expected `key = value`, found `{line}`")))?;
            if !seen.insert(key.to_string()) {
                return Err(err(i + 1, format!("duplicate key `{key}`")));
            }
            self.set(key, value).map_err(|m| err(i + 1, m))?;
        }
        Ok(())
    }

    /// Checks the settings the solvers do not check themselves.
    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.replicates == 0 {
            return usage("replicates must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return usage(format!("threshold must be positive, got {}", self.threshold));
        }
        if self.workers == 0 {
            return usage("workers must be at least 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return usage(format!("noise must be nonnegative, got {}", self.noise));
        }
        if self.noise > 0.0 && self.oracle != OracleChoice::Exact {
            return usage("noise applies to the exact oracle only; set oracle = exact".into());
        }
        if let Some(w) = self.box_half_width {
            if !(w > 0.0) {
                return usage(format!("box half width must be positive, got {w}"));
            }
        }
        let checks = [self.sca(self.seed).validate(), self.lagrangian(self.seed).validate(), self.actor_critic(self.seed).validate()];
        for check in checks {
            if let Err(e) = check {
                return usage(e.to_string());
            }
        }
        Ok(())
    }

    pub fn bounds(&self, dim: usize) -> Option<Bounds> {
        self.box_half_width.map(|w| Bounds::uniform(dim, -w, w))
    }

    /// Solver settings with the box left for [`Self::bounds`] to fill in.
    pub fn sca(&self, seed: u64) -> ScaConfig {
        ScaConfig {
            tau: self.tau,
            eta_coeff: self.eta_coeff,
            eta_exp: self.eta_exp,
            rho_coeff: self.rho_coeff,
            rho_exp: self.rho_exp,
            max_iter: self.iters,
            bounds: None,
            seed,
            feas_tol: self.feas_tol,
            n_traj: self.n_traj,
            stall_tol: self.stall_tol,
            stall_window: self.stall_window,
            ..ScaConfig::default()
        }
    }

    pub fn lagrangian(&self, seed: u64) -> LagrangianConfig {
        LagrangianConfig {
            eta_theta: self.lag_eta_theta,
            eta_lambda: self.lag_eta_lambda,
            decay: self.lag_decay,
            lambda0: self.lag_lambda0,
            max_iter: self.iters,
            bounds: None,
            seed,
            feas_tol: self.feas_tol,
            n_traj: self.n_traj,
        }
    }

    pub fn actor_critic(&self, seed: u64) -> ActorCriticConfig {
        ActorCriticConfig { sca: self.sca(seed), beta_w: self.beta_w, beta_v: self.beta_v, n_actor: self.n_actor }
    }
}

/// Solver seed of replicate `r`: the first word of stream `r` of the base seed.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    cmdp_sca::rng::stream(base, r as u64).next_u64()
}
