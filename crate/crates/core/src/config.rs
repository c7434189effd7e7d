//! TOML run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_tsv, make_synthetic_task, Dataset, SyntheticSpec, TaskInfo, TsvSchema, Vocab,
};
use crate::error::{Error, Result};
use crate::metrics::{default_grid, Metric};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "EARLY_EXIT_OUT";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, initialization and batch order.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSource,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TaskSource {
    Synthetic(SyntheticSpec),
    Tsv(TsvTask),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvTask {
    /// Paths are relative to the config file.
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub n_classes: usize,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_tsv_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub columns: TsvSchema,
}

fn default_metric() -> Metric {
    Metric::Accuracy
}

fn default_tsv_max_seq_len() -> usize {
    128
}

/// Architecture knobs; vocabulary size, class count and sequence length
/// come from the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub ffn_size: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            n_layers: d.n_layers,
            hidden_size: d.hidden_size,
            n_heads: d.n_heads,
            ffn_size: d.ffn_size,
            dropout_rate: d.dropout_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Entropy thresholds; must start at 0. Defaults to 0 plus a
    /// geometric grid up to `ln(n_classes)`.
    pub grid: Option<Vec<f64>>,
    pub timing_repeats: usize,
    /// Quality-drop budgets, in points, for operating-point selection.
    pub max_drops: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: None,
            timing_repeats: 3,
            max_drops: vec![0.0, 1.0, 2.0],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config {
            field: "config",
            reason: e.to_string(),
        })?;
        if let TaskSource::Tsv(t) = &mut config.task {
            for p in [&mut t.train, &mut t.dev]
                .into_iter()
                .chain(t.test.as_mut())
            {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// `explicit`, else `output_dir`, else `$EARLY_EXIT_OUT`, else `runs`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = match &self.task {
            TaskSource::Synthetic(spec) => make_synthetic_task(spec, self.seed)?,
            TaskSource::Tsv(t) => Dataset {
                task: TaskInfo {
                    n_classes: t.n_classes,
                    pair: t.columns.text_b.is_some(),
                    metric: t.metric,
                },
                train: load_tsv(&t.train, &t.columns)?,
                dev: load_tsv(&t.dev, &t.columns)?,
                test: match &t.test {
                    Some(p) => load_tsv(p, &t.columns)?,
                    None => Vec::new(),
                },
            },
        };
        data.validate()?;
        Ok(data)
    }

    pub fn max_seq_len(&self) -> usize {
        match &self.task {
            TaskSource::Synthetic(spec) => spec.max_seq_len(),
            TaskSource::Tsv(t) => t.max_seq_len,
        }
    }

    pub fn model_config(&self, data: &Dataset, vocab: &Vocab) -> Result<ModelConfig> {
        let m = &self.model;
        let config = ModelConfig {
            n_layers: m.n_layers,
            hidden_size: m.hidden_size,
            n_heads: m.n_heads,
            ffn_size: m.ffn_size,
            vocab_size: vocab.len(),
            max_seq_len: self.max_seq_len(),
            n_classes: data.task.n_classes,
            dropout_rate: m.dropout_rate,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn grid(&self, n_classes: usize) -> Vec<f64> {
        self.sweep
            .grid
            .clone()
            .unwrap_or_else(|| default_grid(n_classes))
    }
}
