//! Line-oriented problem files.
//!
//! ```text
//! cmdp-sca-problem 1
//! kind lqr
//! seed 1
//! mode random_init
//! d0 2.798e1
//! init_half_width 1e0
//! matrix A 2 2
//! 9e-1 0e0
//! 0e0 5e-1
//! ...
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Scalars are `key
//! value`; `matrix NAME ROWS COLS` is followed by `ROWS` lines of `COLS`
//! numbers and `vector NAME LEN` by one line of `LEN` numbers. Unknown and
//! duplicate keys are errors. Floats are written in shortest round-trip form,
//! so reading a written file reproduces the problem exactly.

use crate::error::{CliError, Result};
use cmdp_sca::distributed::CoupledQuadratic;
use cmdp_sca::lqr::{generate_problem, LqrProblem, NoiseMode};
use cmdp_sca::mdp_oracle::{exact_tabular, SoftmaxPolicy, TabularCmdp};
use cmdp_sca::{Matrix, Vector};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const HEADER: &str = "cmdp-sca-problem 1";

#[derive(Debug, Clone, PartialEq)]
pub struct TabularProblem {
    pub env: TabularCmdp,
    pub d0: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledProblem {
    pub system: CoupledQuadratic,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Lqr(LqrProblem),
    Tabular(TabularProblem),
    Coupled(CoupledProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Lqr(_) => "lqr",
            Problem::Tabular(_) => "tabular",
            Problem::Coupled(_) => "coupled",
        }
    }
}

/// Tabular instance from [`TabularCmdp::random`] with the budget halfway
/// between the smallest achievable cost and the cost of the uniform policy.
pub fn generate_tabular(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularProblem> {
    if n_states == 0 || n_actions == 0 {
        return Err(CliError::Usage("tabular problems need at least one state and one action".into()));
    }
    let env = TabularCmdp::random(n_states, n_actions, gamma, seed)?;
    let d_min = minimal_cost(&env);
    let d_uniform = exact_tabular(&env, &SoftmaxPolicy::uniform(n_states, n_actions))?.d;
    Ok(TabularProblem { d0: d_min + 0.5 * (d_uniform - d_min), env, seed: Some(seed) })
}

/// `min_π D(π)` by value iteration on the cost.
pub fn minimal_cost(env: &TabularCmdp) -> f64 {
    let (ns, na) = (env.n_states, env.n_actions);
    let mut v = Vector::zeros(ns);
    loop {
        let next = Vector::from_fn(ns, |s, _| {
            (0..na)
                .map(|a| env.cost[(s, a)] + env.gamma * env.transition_row(s, a).zip(v.iter()).map(|(p, x)| p * x).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        });
        let change = (&next - &v).amax();
        v = next;
        if change <= 1e-13 * v.amax().max(1.0) {
            return env.mu.dot(&v);
        }
    }
}

pub fn generate_coupled(n_agents: usize, block_dim: usize, coupling: f64, seed: u64) -> Result<CoupledProblem> {
    if n_agents == 0 || block_dim == 0 {
        return Err(CliError::Usage("coupled problems need at least one agent of positive dimension".into()));
    }
    Ok(CoupledProblem { system: CoupledQuadratic::generate(n_agents, block_dim, coupling, seed)?, seed: Some(seed) })
}

pub fn generate_lqr(n: usize, m: usize, seed: u64, mode: NoiseMode) -> Result<LqrProblem> {
    if n == 0 || m == 0 {
        return Err(CliError::Usage("state and input dimensions must be positive".into()));
    }
    Ok(generate_problem(n, m, seed, mode)?)
}

fn push_scalar(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key} {value}");
}

fn push_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn push_vector(out: &mut String, name: &str, v: &Vector) {
    let _ = writeln!(out, "vector {name} {}", v.len());
    let row: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
    let _ = writeln!(out, "{}", row.join(" "));
}

pub fn write_problem(problem: &Problem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    push_scalar(&mut out, "kind", problem.kind());
    match problem {
        Problem::Lqr(p) => {
            if let Some(seed) = p.seed {
                push_scalar(&mut out, "seed", seed);
            }
            push_scalar(&mut out, "mode", p.mode.as_str());
            push_scalar(&mut out, "d0", format!("{:e}", p.d0));
            push_scalar(&mut out, "init_half_width", format!("{:e}", p.init_half_width));
            for (name, m) in [("A", &p.a), ("B", &p.b), ("Q1", &p.q1), ("R1", &p.r1), ("Q2", &p.q2), ("R2", &p.r2)] {
                push_matrix(&mut out, name, m);
            }
        }
        Problem::Tabular(t) => {
            if let Some(seed) = t.seed {
                push_scalar(&mut out, "seed", seed);
            }
            push_scalar(&mut out, "states", t.env.n_states);
            push_scalar(&mut out, "actions", t.env.n_actions);
            push_scalar(&mut out, "gamma", format!("{:e}", t.env.gamma));
            push_scalar(&mut out, "d0", format!("{:e}", t.d0));
            push_matrix(&mut out, "P", &t.env.transitions);
            push_matrix(&mut out, "R", &t.env.reward);
            push_matrix(&mut out, "C", &t.env.cost);
            push_vector(&mut out, "mu", &t.env.mu);
        }
        Problem::Coupled(c) => {
            let sys = &c.system;
            if let Some(seed) = c.seed {
                push_scalar(&mut out, "seed", seed);
            }
            push_scalar(&mut out, "agents", sys.n_agents());
            push_scalar(&mut out, "coupling", format!("{:e}", sys.coupling));
            push_scalar(&mut out, "noise", format!("{:e}", sys.noise_std));
            push_vector(&mut out, "budgets", &Vector::from_vec(sys.budgets()));
            for (i, (t, c)) in sys.targets.iter().zip(&sys.centers).enumerate() {
                push_vector(&mut out, &format!("target{i}"), t);
                push_vector(&mut out, &format!("center{i}"), c);
            }
        }
    }
    out
}

/// Parsed entries keyed by name, each with the line it started on.
struct Entries<'a> {
    origin: &'a str,
    scalars: BTreeMap<String, (usize, String)>,
    matrices: BTreeMap<String, (usize, Matrix)>,
    vectors: BTreeMap<String, (usize, Vector)>,
}

fn parse_float(origin: &str, line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::parse(origin, line, format!("expected a finite number, found `{token}`"))),
    }
}

fn parse_usize(origin: &str, line: usize, token: &str) -> Result<usize> {
    token.parse().map_err(|_| CliError::parse(origin, line, format!("expected a nonnegative integer, found `{token}`")))
}

fn tokenize(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_row(origin: &str, lines: &mut dyn Iterator<Item = (usize, &str)>, len: usize, after: usize) -> Result<(usize, Vec<f64>)> {
    let (line, text) = lines.next().ok_or_else(|| CliError::parse(origin, after, "unexpected end of file inside a block"))?;
    let row = text.split_whitespace().map(|t| parse_float(origin, line, t)).collect::<Result<Vec<_>>>()?;
    if row.len() != len {
        return Err(CliError::parse(origin, line, format!("expected {len} numbers, found {}", row.len())));
    }
    Ok((line, row))
}

impl<'a> Entries<'a> {
    fn parse(text: &str, origin: &'a str) -> Result<Self> {
        let mut lines = tokenize(text);
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((line, other)) => return Err(CliError::parse(origin, line, format!("expected `{HEADER}`, found `{other}`"))),
            None => return Err(CliError::parse(origin, 1, "empty problem file")),
        }
        let mut entries = Entries { origin, scalars: BTreeMap::new(), matrices: BTreeMap::new(), vectors: BTreeMap::new() };
        let mut seen = BTreeMap::new();
        while let Some((line, text)) = lines.next() {
            let tokens: Vec<&str> = text.split_whitespace().collect();
            let name = match tokens[0] {
                "matrix" | "vector" if tokens.len() >= 2 => tokens[1],
                key => key,
            };
            if let Some(first) = seen.insert(name.to_string(), line) {
                return Err(CliError::parse(origin, line, format!("duplicate key `{name}` (first on line {first})")));
            }
            match (tokens[0], tokens.len()) {
                ("matrix", 4) => {
                    let rows = parse_usize(origin, line, tokens[2])?;
                    let cols = parse_usize(origin, line, tokens[3])?;
                    let mut data = Vec::with_capacity(rows * cols);
                    let mut last = line;
                    for _ in 0..rows {
                        let (l, row) = read_row(origin, &mut lines, cols, last)?;
                        data.extend(row);
                        last = l;
                    }
                    entries.matrices.insert(name.to_string(), (line, Matrix::from_row_slice(rows, cols, &data)));
                }
                ("vector", 3) => {
                    let len = parse_usize(origin, line, tokens[2])?;
                    let (_, row) = read_row(origin, &mut lines, len, line)?;
                    entries.vectors.insert(name.to_string(), (line, Vector::from_vec(row)));
                }
                ("matrix", _) => return Err(CliError::parse(origin, line, "expected `matrix NAME ROWS COLS`")),
                ("vector", _) => return Err(CliError::parse(origin, line, "expected `vector NAME LEN`")),
                (_, 2) => {
                    entries.scalars.insert(name.to_string(), (line, tokens[1].to_string()));
                }
                _ => return Err(CliError::parse(origin, line, format!("expected `key value`, found `{text}`"))),
            }
        }
        Ok(entries)
    }

    fn missing(&self, what: &str) -> CliError {
        CliError::parse(self.origin, 0, format!("missing {what}"))
    }

    fn text(&mut self, key: &str) -> Result<(usize, String)> {
        self.scalars.remove(key).ok_or_else(|| self.missing(&format!("key `{key}`")))
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        let (line, v) = self.text(key)?;
        parse_float(self.origin, line, &v)
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (line, v) = self.text(key)?;
        parse_usize(self.origin, line, &v)
    }

    fn seed(&mut self) -> Result<Option<u64>> {
        match self.scalars.remove("seed") {
            None => Ok(None),
            Some((line, v)) => {
                v.parse().map(Some).map_err(|_| CliError::parse(self.origin, line, format!("expected an unsigned seed, found `{v}`")))
            }
        }
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (line, m) = self.matrices.remove(name).ok_or_else(|| self.missing(&format!("matrix `{name}`")))?;
        if m.shape() != (rows, cols) {
            let msg = format!("matrix `{name}` must be {rows}x{cols}, found {}x{}", m.nrows(), m.ncols());
            return Err(CliError::parse(self.origin, line, msg));
        }
        Ok(m)
    }

    fn vector(&mut self, name: &str, len: Option<usize>) -> Result<Vector> {
        let (line, v) = self.vectors.remove(name).ok_or_else(|| self.missing(&format!("vector `{name}`")))?;
        match len {
            Some(n) if v.len() != n => {
                Err(CliError::parse(self.origin, line, format!("vector `{name}` must have length {n}, found {}", v.len())))
            }
            _ => Ok(v),
        }
    }

    /// Anything not consumed by the kind-specific reader.
    fn finish(self) -> Result<()> {
        let leftover = self
            .scalars
            .iter()
            .map(|(k, (l, _))| (k, *l))
            .chain(self.matrices.iter().map(|(k, (l, _))| (k, *l)))
            .chain(self.vectors.iter().map(|(k, (l, _))| (k, *l)))
            .min_by_key(|(_, l)| *l);
        match leftover {
            Some((key, line)) => Err(CliError::parse(self.origin, line, format!("unknown key `{key}`"))),
            None => Ok(()),
        }
    }
}

/// Parses a problem file. `origin` labels error messages.
pub fn parse_problem(text: &str, origin: &str) -> Result<Problem> {
    let mut e = Entries::parse(text, origin)?;
    let (kind_line, kind) = e.text("kind")?;
    let problem = match kind.as_str() {
        "lqr" => {
            let seed = e.seed()?;
            let (mode_line, mode) = e.text("mode")?;
            let mode = NoiseMode::parse(&mode)
                .ok_or_else(|| CliError::parse(origin, mode_line, format!("unknown mode `{mode}` (random_init | noisy_dynamics)")))?;
            let d0 = e.float("d0")?;
            let init_half_width = e.float("init_half_width")?;
            let n = e.matrices.get("A").map(|(_, a)| a.nrows()).ok_or_else(|| e.missing("matrix `A`"))?;
            let m = e.matrices.get("B").map(|(_, b)| b.ncols()).ok_or_else(|| e.missing("matrix `B`"))?;
            let p = LqrProblem {
                a: e.matrix("A", n, n)?,
                b: e.matrix("B", n, m)?,
                q1: e.matrix("Q1", n, n)?,
                r1: e.matrix("R1", m, m)?,
                q2: e.matrix("Q2", n, n)?,
                r2: e.matrix("R2", m, m)?,
                d0,
                mode,
                init_half_width,
                seed,
            };
            p.validate()?;
            Problem::Lqr(p)
        }
        "tabular" => {
            let seed = e.seed()?;
            let ns = e.count("states")?;
            let na = e.count("actions")?;
            let gamma = e.float("gamma")?;
            let d0 = e.float("d0")?;
            let env = TabularCmdp::new(
                e.matrix("P", ns * na, ns)?,
                e.matrix("R", ns, na)?,
                e.matrix("C", ns, na)?,
                gamma,
                e.vector("mu", Some(ns))?,
            )?;
            Problem::Tabular(TabularProblem { env, d0, seed })
        }
        "coupled" => {
            let seed = e.seed()?;
            let agents = e.count("agents")?;
            let coupling = e.float("coupling")?;
            let noise = e.float("noise")?;
            let budgets = e.vector("budgets", Some(agents))?;
            let mut targets = Vec::with_capacity(agents);
            let mut centers = Vec::with_capacity(agents);
            for i in 0..agents {
                let t = e.vector(&format!("target{i}"), None)?;
                centers.push(e.vector(&format!("center{i}"), Some(t.len()))?);
                targets.push(t);
            }
            let system = CoupledQuadratic::new(targets, centers, budgets.iter().copied().collect(), coupling, noise)?;
            Problem::Coupled(CoupledProblem { system, seed })
        }
        other => return Err(CliError::parse(origin, kind_line, format!("unknown kind `{other}` (lqr | tabular | coupled)"))),
    };
    e.finish()?;
    Ok(problem)
}

pub fn read_problem(path: &std::path::Path) -> Result<Problem> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_problem(&text, &path.display().to_string())
}
