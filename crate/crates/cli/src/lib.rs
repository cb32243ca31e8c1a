//! Configuration, scenario runs, artifacts and plots for the
//! `singular-cbf` command.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod plot;
pub mod run;

use std::path::PathBuf;

pub use config::{
    parse_config, parse_config_str, ConfigError, ConfigIssue, ScenarioConfig, ScenarioKind,
};
pub use run::{compare_runs, run_map, run_pair, run_scenario, MapSummary, RunOutput};

/// Environment variable holding the log filter (`error` … `trace`).
pub const LOG_ENV: &str = "SINGULAR_CBF_LOG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{scenario}: {source}")]
    Scenario {
        scenario: &'static str,
        source: singular_cbf::Error,
    },
    #[error("{scenario}: {count} infeasible QP steps, more than the {max} allowed")]
    TooManyInfeasible {
        scenario: &'static str,
        count: usize,
        max: usize,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for problems with the input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Scenario { .. }
            | CliError::TooManyInfeasible { .. }
            | CliError::Io { .. } => 2,
        }
    }
}
