pub mod commands;
pub mod server;

use std::ops::RangeInclusive;
use std::path::PathBuf;

use prereq_core::rule_calc::CalcError;
use prereq_core::{BankError, OntologyError, RuleError, SessionError, StudentLogError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Calc(#[from] CalcError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Log(#[from] StudentLogError),
    #[error("input ended before the quiz finished")]
    InputClosed,
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

pub fn read_file(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `A..B` (inclusive), `A..=B` or a single `A`.
pub fn parse_range(s: &str) -> Result<RangeInclusive<i64>, String> {
    let int = |t: &str| t.trim().parse::<i64>().map_err(|_| format!("`{t}` is not an integer"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (int(a)?, int(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = int(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok(lo..=hi)
}
