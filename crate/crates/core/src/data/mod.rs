//! Classification examples, tokenization, TSV I/O, batching and the
//! synthetic EASY/HARD keyword task.

mod batch;
mod synthetic;
mod tsv;
mod vocab;

pub use batch::{batch_indices, Batches};
pub use synthetic::{make_synthetic_task, SyntheticSpec};
pub use tsv::{load_tsv, write_tsv, TsvSchema};
pub use vocab::{encode_batch, tokenize, Encoded, Vocab, CLS, PAD, SEP, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Difficulty stratum of a synthetic example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Easy,
    Hard,
}

impl Stratum {
    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::Easy => "easy",
            Stratum::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "easy" => Some(Stratum::Easy),
            "hard" => Some(Stratum::Hard),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: usize,
    /// Only known for synthetic data.
    pub stratum: Option<Stratum>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub n_classes: usize,
    pub pair: bool,
    pub metric: Metric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskInfo,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Checks labels and texts of every split against the task.
    pub fn validate(&self) -> Result<()> {
        for (name, split) in [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
        ] {
            for (i, ex) in split.iter().enumerate() {
                if ex.label >= self.task.n_classes {
                    return Err(Error::invalid(format!(
                        "{name}[{i}]: label {} out of range for {} classes",
                        ex.label, self.task.n_classes
                    )));
                }
                if ex.text_a.trim().is_empty() {
                    return Err(Error::invalid(format!("{name}[{i}]: empty text_a")));
                }
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::build(&self.train)
    }
}
