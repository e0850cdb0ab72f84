//! Command implementations behind the `etcsim` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod sweep;

use etcsim_core::expr::ParseError;
use etcsim_core::{ConfigError, EngineError};
use etcsim_core::analysis::AdvisorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("config: psi[{index}] = {source_text:?}: {source}")]
    Expression {
        index: usize,
        source_text: String,
        #[source]
        source: ParseError,
    },
    #[error("config: {0}")]
    Invalid(#[from] ConfigError),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("advisor precondition failed: {0}")]
    Advisor(#[from] AdvisorError),
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] EngineError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for failures during integration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(e) if !matches!(e, EngineError::Config(_)) => 2,
            _ => 1,
        }
    }
}
