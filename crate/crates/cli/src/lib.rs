//! Experiment harness: problem files, solver runs, replicate comparison and
//! CSV logs. The `cmdp-sca` binary is a thin wrapper over [`commands`].

pub mod commands;
pub mod compare;
pub mod config;
pub mod csv_log;
pub mod error;
pub mod problem_file;
pub mod solve;

pub use error::{CliError, Result};
