//! Run configuration: one TOML document with a table per module.
//!
//! Unknown keys are rejected everywhere. The top-level `seed` overrides
//! the seeds of the individual sections so one number reproduces a run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archsearch::{DeConfig, SearchSpace};
use crate::embedding::EmbeddingConfig;
use crate::ensemble::FusionRule;
use crate::error::{config_err, Error, Result};
use crate::pipeline::PipelineConfig;
use crate::siggen::{DatasetConfig, InjectedEvent, ScenarioSpec};
use crate::tracker::{ErrorBudget, TrackerConfig};
use crate::training::{EnsembleTrainConfig, TrainConfig};

pub const SNAPSHOT_FILE: &str = "config.toml";

/// Synthetic stream used by `infer` and `track` when no file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub duration_s: f64,
    pub channel_count: usize,
    pub events: Vec<InjectedEvent>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            channel_count: 16,
            events: vec![InjectedEvent {
                class_id: 6,
                start_s: 10.0,
                end_s: 20.0,
                channel_lo: 5,
                channel_hi: 8,
                profile: None,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub de: DeConfig,
    /// Training budget of one fitness evaluation.
    pub budget: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            de: DeConfig::default(),
            budget: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub frames: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { frames: 1000, repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
    pub ensemble: EnsembleTrainConfig,
    pub fusion: FusionRule,
    pub embedding: EmbeddingConfig,
    pub search: SearchConfig,
    pub stream: StreamConfig,
    pub tracker: TrackerConfig,
    pub budget: Option<ErrorBudget>,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            pipeline: PipelineConfig::default(),
            ensemble: EnsembleTrainConfig::default(),
            fusion: FusionRule::default(),
            embedding: EmbeddingConfig::default(),
            search: SearchConfig::default(),
            stream: StreamConfig::default(),
            tracker: TrackerConfig::default(),
            budget: None,
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Copies the master seed into every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = seed;
        self.ensemble.train.seed = seed;
        self.embedding.seed = seed;
        self.search.de.seed = seed;
        self.search.budget.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.pipeline.validate()?;
        self.ensemble.train.validate()?;
        self.search.space.validate()?;
        self.search.de.validate()?;
        crate::ensemble::validate_thresholds(&self.tracker.thresholds)?;
        if let Some(b) = &self.budget {
            b.validate()?;
        }
        if self.bench.frames == 0 || self.bench.repeats == 0 {
            return Err(config_err("bench needs frames and repeats"));
        }
        self.scenario().validate()
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            events: self.stream.events.clone(),
            framing: self.dataset.framing,
            ..ScenarioSpec::background_only(self.stream.duration_s, self.stream.channel_count, self.seed)
        }
    }

    /// Writes the snapshot that reproduces this run.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(SNAPSHOT_FILE), self.to_toml()?)?;
        Ok(())
    }
}
