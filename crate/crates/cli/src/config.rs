//! Pipeline configuration: a TOML file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use cbm_core::{SelectionConfig, Shots, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Labeled training image embeddings (CBV1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    /// Label file covering training and test images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Concept text embeddings (CBV1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concepts: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
    /// Unlabeled images for visual activation. Falls back to the training images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_set: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    /// Model artifact read by predict/explain/eval. Defaults to `<output_dir>/model.cbm`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringOptions {
    /// L2-normalize every embedding row at load.
    pub normalize: bool,
    /// Clamp floor applied to similarities before the per-concept class distribution.
    pub epsilon: f64,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            epsilon: cbm_core::scoring::DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    /// Concepts listed per explanation.
    pub top_k: usize,
    /// Also write score-table.json from `select` and `train`.
    pub emit_score_table: bool,
    /// Length of the highest/lowest visual activation lists.
    pub extremes: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            top_k: 5,
            emit_score_table: false,
            extremes: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub scoring: ScoringOptions,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    pub report: ReportOptions,
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.for_each_mut(|p| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        });
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.output_dir().join("model.cbm"))
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.train.validate()?;
        if !(self.scoring.epsilon.is_finite() && self.scoring.epsilon > 0.0) {
            return Err(CliError::Config(format!(
                "scoring.epsilon must be positive, got {}",
                self.scoring.epsilon
            )));
        }
        if self.report.top_k == 0 {
            return Err(CliError::Config("report.top_k must be at least 1".into()));
        }
        Ok(())
    }
}

impl Paths {
    fn for_each_mut(&mut self, mut f: impl FnMut(&mut PathBuf)) {
        for p in [
            &mut self.images,
            &mut self.labels,
            &mut self.concepts,
            &mut self.pool,
            &mut self.target_set,
            &mut self.test_images,
            &mut self.model,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            f(p);
        }
    }

    /// Returns the path or a config error naming the missing key.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let value = match key {
            "images" => &self.images,
            "labels" => &self.labels,
            "concepts" => &self.concepts,
            "pool" => &self.pool,
            "target_set" => &self.target_set,
            "test_images" => &self.test_images,
            "model" => &self.model,
            "output_dir" => &self.output_dir,
            _ => unreachable!("unknown path key {key}"),
        };
        let path = value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))?;
        if !path.exists() {
            return Err(CliError::Config(format!(
                "paths.{key} = {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }
}

/// Flags shared by every pipeline subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Pipeline config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Concepts selected per class.
    #[arg(long)]
    pub k: Option<usize>,
    /// Shots per class; a comma-separated list runs a sweep (train only).
    #[arg(long, value_delimiter = ',')]
    pub shots: Vec<Shots>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Unlabeled image set used for visual activation.
    #[arg(long)]
    pub target_set: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep embeddings unnormalized.
    #[arg(long)]
    pub raw: bool,
}

/// A fully resolved configuration plus the list of shot settings to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub config: PipelineConfig,
    pub shots: Vec<Shots>,
}

impl Settings {
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let sel = &mut cfg.selection;
        sel.alpha = o.alpha.unwrap_or(sel.alpha);
        sel.beta = o.beta.unwrap_or(sel.beta);
        sel.gamma = o.gamma.unwrap_or(sel.gamma);
        sel.k = o.k.unwrap_or(sel.k);
        let train = &mut cfg.train;
        train.seed = o.seed.unwrap_or(train.seed);
        train.learning_rate = o.lr.unwrap_or(train.learning_rate);
        train.epochs = o.epochs.unwrap_or(train.epochs);
        cfg.report.top_k = o.top_k.unwrap_or(cfg.report.top_k);
        if o.raw {
            cfg.scoring.normalize = false;
        }
        let paths = &mut cfg.paths;
        for (slot, value) in [
            (&mut paths.target_set, &o.target_set),
            (&mut paths.images, &o.images),
            (&mut paths.labels, &o.labels),
            (&mut paths.concepts, &o.concepts),
            (&mut paths.pool, &o.pool),
            (&mut paths.test_images, &o.test_images),
            (&mut paths.model, &o.model),
            (&mut paths.output_dir, &o.out),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        let shots = if o.shots.is_empty() {
            vec![cfg.train.shots]
        } else {
            o.shots.clone()
        };
        cfg.train.shots = shots[0];
        cfg.validate()?;
        Ok(Self { config: cfg, shots })
    }

    pub fn from_config(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            shots: vec![config.train.shots],
            config,
        })
    }

    pub fn is_sweep(&self) -> bool {
        self.shots.len() > 1
    }

    /// Fails unless a single shot setting was requested.
    pub fn single(&self, command: &str) -> Result<&PipelineConfig> {
        if self.is_sweep() {
            return Err(CliError::Config(format!(
                "`{command}` takes a single --shots value; sweeps are only supported by `train`"
            )));
        }
        Ok(&self.config)
    }
}
