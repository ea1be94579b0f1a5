//! Iterate logs as CSV.
//!
//! A file starts with `# key=value` metadata lines, the first of which is
//! `# schema=cmdp-sca-log/1`, followed by the header
//! `k,J,D,feasible,alpha,eta,rho,theta_norm` (plus `,agent` for multi-agent
//! runs) and one row per iteration (per agent). Floats carry 17 significant
//! digits.

use crate::error::{CliError, Result};
use cmdp_sca::distributed::MmdpLog;
use cmdp_sca::sca::IterateLog;
use std::fmt::Write as _;

pub const SCHEMA: &str = "cmdp-sca-log/1";
pub const COLUMNS: [&str; 8] = ["k", "J", "D", "feasible", "alpha", "eta", "rho", "theta_norm"];

#[derive(Debug, Clone, PartialEq)]
pub enum RunLog {
    Single(IterateLog),
    Multi(MmdpLog),
}

impl RunLog {
    pub fn len(&self) -> usize {
        match self {
            RunLog::Single(l) => l.records.len(),
            RunLog::Multi(l) => l.records.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub k: usize,
    pub j: f64,
    pub d: f64,
    pub feasible: bool,
    pub alpha: f64,
    pub eta: f64,
    pub rho: f64,
    pub theta_norm: f64,
    pub agent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub meta: Vec<(String, String)>,
    pub multi_agent: bool,
    pub rows: Vec<LogRow>,
}

impl ParsedLog {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn header(multi_agent: bool) -> String {
    let mut h = COLUMNS.join(",");
    if multi_agent {
        h.push_str(",agent");
    }
    h
}

fn push_row(out: &mut String, row: &LogRow) {
    let _ = write!(
        out,
        "{},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}",
        row.k,
        row.j,
        row.d,
        u8::from(row.feasible),
        row.alpha,
        row.eta,
        row.rho,
        row.theta_norm
    );
    if let Some(agent) = row.agent {
        let _ = write!(out, ",{agent}");
    }
    out.push('\n');
}

/// Rows in log order; multi-agent logs give one row per agent per round.
pub fn rows(log: &RunLog) -> Vec<LogRow> {
    match log {
        RunLog::Single(l) => l
            .records
            .iter()
            .map(|r| LogRow {
                k: r.k,
                j: r.j,
                d: r.d,
                feasible: r.feasible,
                alpha: r.alpha,
                eta: r.eta,
                rho: r.rho,
                theta_norm: r.theta.norm(),
                agent: None,
            })
            .collect(),
        RunLog::Multi(l) => l
            .records
            .iter()
            .flat_map(|r| {
                let norm = r.theta.norm();
                r.agents.iter().enumerate().map(move |(i, a)| LogRow {
                    k: r.k,
                    j: r.j,
                    d: a.d,
                    feasible: a.feasible,
                    alpha: a.alpha,
                    eta: r.eta,
                    rho: r.rho,
                    theta_norm: norm,
                    agent: Some(i),
                })
            })
            .collect(),
    }
}

/// Metadata keys and values must not contain newlines; `=` is allowed in values.
pub fn write_log(meta: &[(String, String)], log: &RunLog) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# schema={SCHEMA}");
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}={}", v.replace('\n', " "));
    }
    let _ = writeln!(out, "{}", header(matches!(log, RunLog::Multi(_))));
    for row in rows(log) {
        push_row(&mut out, &row);
    }
    out
}

fn parse_field<T: std::str::FromStr>(origin: &str, line: usize, name: &str, text: &str) -> Result<T> {
    text.parse().map_err(|_| CliError::parse(origin, line, format!("bad {name} value `{text}`")))
}

/// Strict reader: any deviation from the schema is an error.
pub fn read_log(text: &str, origin: &str) -> Result<ParsedLog> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut meta = Vec::new();
    let header_line = loop {
        let (n, line) = lines.next().ok_or_else(|| CliError::parse(origin, 1, "missing header"))?;
        match line.strip_prefix("# ") {
            Some(kv) => {
                let (k, v) = kv.split_once('=').ok_or_else(|| CliError::parse(origin, n, "metadata must be `# key=value`"))?;
                if meta.is_empty() && (k != "schema" || v != SCHEMA) {
                    return Err(CliError::parse(origin, n, format!("expected `# schema={SCHEMA}`, found `{line}`")));
                }
                meta.push((k.to_string(), v.to_string()));
            }
            None if meta.is_empty() => return Err(CliError::parse(origin, n, format!("expected `# schema={SCHEMA}`"))),
            None => break (n, line),
        }
    };
    let multi_agent = match header_line.1 {
        h if h == header(false) => false,
        h if h == header(true) => true,
        other => return Err(CliError::parse(origin, header_line.0, format!("unexpected columns `{other}`"))),
    };
    let width = COLUMNS.len() + usize::from(multi_agent);
    let mut rows = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != width {
            return Err(CliError::parse(origin, n, format!("expected {width} fields, found {}", f.len())));
        }
        let feasible = match f[3] {
            "0" => false,
            "1" => true,
            other => return Err(CliError::parse(origin, n, format!("bad feasible value `{other}`"))),
        };
        rows.push(LogRow {
            k: parse_field(origin, n, "k", f[0])?,
            j: parse_field(origin, n, "J", f[1])?,
            d: parse_field(origin, n, "D", f[2])?,
            feasible,
            alpha: parse_field(origin, n, "alpha", f[4])?,
            eta: parse_field(origin, n, "eta", f[5])?,
            rho: parse_field(origin, n, "rho", f[6])?,
            theta_norm: parse_field(origin, n, "theta_norm", f[7])?,
            agent: if multi_agent { Some(parse_field(origin, n, "agent", f[8])?) } else { None },
        });
    }
    Ok(ParsedLog { meta, multi_agent, rows })
}
