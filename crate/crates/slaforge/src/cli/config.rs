//! Run configuration: one TOML document drives every subcommand. Unknown
//! keys are rejected; the fully-resolved form is written next to each run's
//! artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, ObsSpec};
use crate::forecaster::ForecastMode;
use crate::sla::SloRuleSet;
use crate::topology::{build_default_graph, ServiceGraph};

use super::CliError;

fn default_seed() -> u64 {
    0
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub graph: GraphConfig,
    pub telemetry: TelemetryConfig,
    pub transform: TransformConfig,
    pub forecaster: ForecasterConfig,
    pub sla: SlaConfig,
    pub agent: AgentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            out_dir: default_out_dir(),
            graph: GraphConfig::default(),
            telemetry: TelemetryConfig::default(),
            transform: TransformConfig::default(),
            forecaster: ForecasterConfig::default(),
            sla: SlaConfig::default(),
            agent: AgentSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Path to an edge-list override; the default 6-node topology otherwise.
    pub edges_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryConfig {
    /// `synth` generates data from the seed; `csv` ingests `csv_paths`.
    pub source: TelemetrySource,
    pub steps: usize,
    pub burst_rate: f64,
    pub burst_magnitude: f64,
    pub csv_paths: Vec<PathBuf>,
    /// Error on metrics outside the catalog instead of skipping them.
    pub strict_metrics: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetrySource {
    Synth,
    Csv,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            source: TelemetrySource::Synth,
            steps: 20_000,
            burst_rate: 0.02,
            burst_magnitude: 1.0,
            csv_paths: Vec::new(),
            strict_metrics: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformConfig {
    pub n_quantiles: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig { n_quantiles: crate::telemetry::DEFAULT_N_QUANTILES }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecasterConfig {
    pub k: usize,
    pub d_h: usize,
    pub history: usize,
    pub horizon: usize,
    pub mode: ForecastMode,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            k: 3,
            d_h: 128,
            history: 4,
            horizon: 4,
            mode: ForecastMode::Single,
            lr: 1e-2,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlaConfig {
    /// Path to a TOML rule set; the built-in default rules otherwise.
    pub rules_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub steps: usize,
    pub warmup: usize,
    pub update_every: usize,
    pub target_update: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_fraction: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub obs: ObsSpec,
    /// Evaluation episode count.
    pub episodes: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let d = AgentConfig::default();
        AgentSection {
            steps: d.steps,
            warmup: d.warmup,
            update_every: d.update_every,
            target_update: d.target_update,
            buffer_capacity: d.buffer_capacity,
            batch_size: d.batch_size,
            lr: d.lr,
            gamma: d.gamma,
            eps_start: d.eps_start,
            eps_end: d.eps_end,
            eps_fraction: d.eps_fraction,
            grad_clip: d.grad_clip,
            hidden: d.hidden,
            obs: ObsSpec::FirstStep,
            episodes: 100,
        }
    }
}

impl AgentSection {
    /// The training hyperparameters, seeded from the run seed.
    pub fn dqn(&self, seed: u64) -> AgentConfig {
        AgentConfig {
            steps: self.steps,
            warmup: self.warmup,
            update_every: self.update_every,
            target_update: self.target_update,
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            lr: self.lr,
            gamma: self.gamma,
            eps_start: self.eps_start,
            eps_end: self.eps_end,
            eps_fraction: self.eps_fraction,
            grad_clip: self.grad_clip,
            hidden: self.hidden,
            seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let f = &self.forecaster;
        if f.k == 0 || f.d_h == 0 || f.history == 0 || f.horizon == 0 {
            return Err(CliError::Config("forecaster dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.telemetry.burst_rate) {
            return Err(CliError::Config("telemetry.burst_rate must be in [0, 1]".into()));
        }
        if self.telemetry.source == TelemetrySource::Csv && self.telemetry.csv_paths.is_empty() {
            return Err(CliError::Config("telemetry.source = \"csv\" requires csv_paths".into()));
        }
        let a = &self.agent;
        if a.eps_end > a.eps_start {
            return Err(CliError::Config("agent eps_end must not exceed eps_start".into()));
        }
        if a.steps == 0 || a.batch_size == 0 || a.buffer_capacity == 0 {
            return Err(CliError::Config("agent step/batch/buffer sizes must be positive".into()));
        }
        Ok(())
    }

    /// Fully-resolved TOML form, written next to every run's artifacts and
    /// hashed into the manifest.
    pub fn to_resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn graph(&self) -> Result<ServiceGraph, CliError> {
        match &self.graph.edges_file {
            None => Ok(build_default_graph()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Io(format!("cannot read edge list {}: {e}", path.display()))
                })?;
                ServiceGraph::from_edge_list_text(&text, None)
                    .map_err(|e| CliError::Config(format!("bad edge list: {e}")))
            }
        }
    }

    pub fn rules(&self) -> Result<SloRuleSet, CliError> {
        let rules = match &self.sla.rules_file {
            None => SloRuleSet::default_rules(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Io(format!("cannot read rules {}: {e}", path.display()))
                })?;
                SloRuleSet::from_toml(&text)
                    .map_err(|e| CliError::Config(format!("bad rule set: {e}")))?
            }
        };
        rules.validate().map_err(|e| CliError::Config(format!("bad rule set: {e}")))?;
        Ok(rules)
    }
}
