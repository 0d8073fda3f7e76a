//! Benchmark cases for the two AMR backends: setups, exact solutions, error
//! norms, diagnostics output and verification suites.

pub mod config;
pub mod norms;
pub mod output;
pub mod run;
pub mod setups;
pub mod verify;

use std::path::Path;

use thiserror::Error;

pub use config::{Backend, CaseConfig, CaseId};
pub use norms::l2_error_norm;
pub use output::{DiagRow, DiagnosticsSeries, ErrorReport};
pub use run::{run_case, RunOutcome, Simulation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key '{key}' on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("invalid value '{value}' for {key}: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Process exit code: 2 for configuration (and output) problems, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

/// Defaults of `case` for the chosen backend, then the config file, then the
/// explicit overrides (`key`, `value`) in order.
pub fn load_config(
    case: CaseId,
    backend: Option<Backend>,
    file: Option<&Path>,
    overrides: &[(&str, &str)],
) -> Result<CaseConfig, ConfigError> {
    let text = match file {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
            path: p.display().to_string(),
            reason: e.to_string(),
        })?,
        None => String::new(),
    };
    // The backend picks the defaults, so look for it before applying.
    let mut probe = CaseConfig::defaults(case);
    probe.apply_text(&text)?;
    if probe.case != case {
        return Err(ConfigError::Inconsistent(format!(
            "config file is for case '{}' but '{}' was requested",
            probe.case, case
        )));
    }
    let backend = backend.unwrap_or(probe.backend);
    let mut cfg = CaseConfig::for_backend(case, backend);
    cfg.apply_text(&text)?;
    cfg.backend = backend;
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
