//! Experiment runner for the `mixcp` library.
//!
//! Each experiment reads an [`ExperimentConfig`], runs its replications in
//! parallel (reduced in replication order) and returns a CSV body. The file
//! written by [`render`] starts with a `# ` block holding the crate version
//! and the fully resolved config, which is enough to regenerate it.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub mod config;
pub mod experiments;

pub use config::{parse_config, ExperimentConfig, ExperimentKind};
pub use experiments::{run, Report};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(mixcp::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<mixcp::Error> for CliError {
    fn from(e: mixcp::Error) -> Self {
        match e {
            mixcp::Error::BadParameter(_) | mixcp::Error::NonStationaryLambda(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for config errors, 3 when no feasible bound exists, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(mixcp::Error::NoFeasiblePlan) => 3,
            _ => 1,
        }
    }
}

/// Reads and resolves a config file, optionally checking its experiment kind.
pub fn load_config(path: &Path, expected: Option<ExperimentKind>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    if let Some(kind) = expected {
        if cfg.experiment != kind {
            return Err(CliError::Config(format!("config is for {}, not {}", cfg.experiment.name(), kind.name())));
        }
    }
    cfg.resolve()
}

/// Header block plus CSV body.
pub fn render(cfg: &ExperimentConfig, report: &Report) -> String {
    let mut out = String::new();
    writeln!(out, "# mixcp {}", env!("CARGO_PKG_VERSION")).unwrap();
    for line in cfg.to_toml().lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            writeln!(out, "# {line}").unwrap();
        }
    }
    out.push_str(&report.body);
    out
}
