//! Command-line surface: one binary, one config, seven subcommands.

mod commands;
mod config;

pub use commands::run;
pub use config::{
    AgentSection, ForecasterConfig, GraphConfig, RunConfig, SlaConfig, TelemetryConfig,
    TelemetrySource, TransformConfig,
};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::agent::AgentError;
use crate::forecaster::ForecastError;
use crate::telemetry::TelemetryError;

/// Proactive SLA management: telemetry synthesis/ingest, graph-convolutional
/// forecasting, SLO rule evaluation, and DQN scale-decision training.
#[derive(Debug, Parser)]
#[command(name = "slaforge", version, about)]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generates seeded synthetic telemetry plus SLA labels.
    Synth {
        /// Overrides the config's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Ingests long-format telemetry CSVs onto the 30 s grid.
    Ingest {
        /// Input CSV paths (override the config's csv_paths).
        paths: Vec<PathBuf>,
    },
    /// Trains the forecaster and writes checkpoint + reports.
    TrainForecaster {
        /// Named architecture preset; `table2-large` selects d_h=2048, K=3.
        #[arg(long)]
        arch: Option<String>,
    },
    /// Evaluates a forecaster checkpoint on the test split.
    EvalForecaster {
        /// Comparator rows to add: `persistence` and/or `k1`.
        #[arg(long)]
        baseline: Vec<String>,
    },
    /// Trains the DQN agent against a forecaster checkpoint.
    TrainAgent,
    /// Evaluates an agent checkpoint greedily over test episodes.
    EvalAgent {
        /// Number of evaluation episodes.
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Runs synth → train-forecaster → eval-forecaster → train-agent →
    /// eval-agent in one invocation.
    Pipeline,
}

/// Process-level failures, each with a documented exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<TelemetryError> for CliError {
    fn from(e: TelemetryError) -> Self {
        match e {
            TelemetryError::Io(_) | TelemetryError::Csv(_) => CliError::Io(e.to_string()),
            TelemetryError::BadConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ForecastError> for CliError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::Diverged { .. } => CliError::Diverged(e.to_string()),
            ForecastError::Io(_) => CliError::Io(e.to_string()),
            ForecastError::EmptyWindows => CliError::Data(e.to_string()),
            ForecastError::BadCheckpoint(_) => CliError::Data(e.to_string()),
            ForecastError::Numerics(_) | ForecastError::Topology(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Diverged { .. } => CliError::Diverged(e.to_string()),
            AgentError::Forecast(f) => f.into(),
            AgentError::Telemetry(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::sla::SlaError> for CliError {
    fn from(e: crate::sla::SlaError) -> Self {
        CliError::Data(e.to_string())
    }
}
