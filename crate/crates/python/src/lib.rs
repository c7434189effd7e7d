//! Python bindings: model construction, two-stage training, early-exit
//! inference and threshold sweeps.

use early_exit::data::{
    self, load_tsv, make_synthetic_task, Example, SyntheticSpec, TaskInfo, TsvSchema, Vocab,
};
use early_exit::inference::{self, encode_samples, EncodedSample, ExitPolicy};
use early_exit::metrics::{self, default_grid, ExitHistogram, Metric, SweepOptions};
use early_exit::model::{self, TokenBatch};
use early_exit::training::{self, TrainConfig};
use early_exit::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Checkpoint { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for early_exit::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Shannon entropy in nats of a probability vector.
#[pyfunction]
fn entropy(probabilities: Vec<f64>) -> PyResult<f64> {
    inference::entropy(&probabilities).py()
}

/// `1 - Σ i·N_i / Σ n·N_i` for exit counts `N_1..N_n`.
#[pyfunction]
fn expected_saving(counts: Vec<u64>) -> PyResult<f64> {
    metrics::expected_saving(&ExitHistogram::new(counts).py()?).py()
}

/// Entropy thresholds: 0 followed by a geometric grid up to `ln(n_classes)`.
#[pyfunction]
fn threshold_grid(n_classes: usize) -> Vec<f64> {
    default_grid(n_classes)
}

#[pyclass(name = "ModelConfig", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    n_layers: usize,
    hidden_size: usize,
    n_heads: usize,
    ffn_size: usize,
    vocab_size: usize,
    max_seq_len: usize,
    n_classes: usize,
    dropout_rate: f64,
}

impl From<&model::ModelConfig> for PyModelConfig {
    fn from(c: &model::ModelConfig) -> Self {
        Self {
            n_layers: c.n_layers,
            hidden_size: c.hidden_size,
            n_heads: c.n_heads,
            ffn_size: c.ffn_size,
            vocab_size: c.vocab_size,
            max_seq_len: c.max_seq_len,
            n_classes: c.n_classes,
            dropout_rate: c.dropout_rate,
        }
    }
}

impl PyModelConfig {
    fn to_rust(&self) -> model::ModelConfig {
        model::ModelConfig {
            n_layers: self.n_layers,
            hidden_size: self.hidden_size,
            n_heads: self.n_heads,
            ffn_size: self.ffn_size,
            vocab_size: self.vocab_size,
            max_seq_len: self.max_seq_len,
            n_classes: self.n_classes,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (
        vocab_size,
        n_classes,
        max_seq_len,
        n_layers = 4,
        hidden_size = 32,
        n_heads = 2,
        ffn_size = 64,
        dropout_rate = 0.0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        vocab_size: usize,
        n_classes: usize,
        max_seq_len: usize,
        n_layers: usize,
        hidden_size: usize,
        n_heads: usize,
        ffn_size: usize,
        dropout_rate: f64,
    ) -> PyResult<Self> {
        let c = Self {
            n_layers,
            hidden_size,
            n_heads,
            ffn_size,
            vocab_size,
            max_seq_len,
            n_classes,
            dropout_rate,
        };
        c.to_rust().validate().py()?;
        Ok(c)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.to_rust())
    }
}

/// A labelled task with train and dev splits and the train-set vocabulary.
#[pyclass(name = "Dataset")]
struct PyDataset {
    data: data::Dataset,
    vocab: Vocab,
    max_seq_len: usize,
}

/// `(text_a, text_b, label, stratum)`.
type ExampleTuple = (String, Option<String>, usize, Option<&'static str>);

/// `(S, quality, expected_saving, exit_counts)`.
type SweepRow = (f64, f64, f64, Vec<u64>);

fn example_tuple(e: &Example) -> ExampleTuple {
    (
        e.text_a.clone(),
        e.text_b.clone(),
        e.label,
        e.stratum.map(|s| s.as_str()),
    )
}

impl PyDataset {
    fn split(&self, name: &str) -> PyResult<&[Example]> {
        match name {
            "train" => Ok(&self.data.train),
            "dev" => Ok(&self.data.dev),
            "test" => Ok(&self.data.test),
            _ => Err(PyValueError::new_err(format!("unknown split `{name}`"))),
        }
    }

    fn samples(&self, name: &str) -> PyResult<Vec<EncodedSample>> {
        Ok(encode_samples(
            self.split(name)?,
            &self.vocab,
            self.max_seq_len,
        ))
    }
}

#[pymethods]
impl PyDataset {
    /// Synthetic keyword task with EASY and HARD strata.
    #[staticmethod]
    #[pyo3(signature = (seed = 42, n_train = 2000, n_dev = 500, n_classes = 2))]
    fn synthetic(seed: u64, n_train: usize, n_dev: usize, n_classes: usize) -> PyResult<Self> {
        let spec = SyntheticSpec {
            n_train,
            n_dev,
            n_classes,
            ..SyntheticSpec::default()
        };
        let data = make_synthetic_task(&spec, seed).py()?;
        let vocab = data.vocab();
        Ok(Self {
            data,
            vocab,
            max_seq_len: spec.max_seq_len(),
        })
    }

    /// Tab-separated files with a header row and integer labels.
    #[staticmethod]
    #[pyo3(signature = (train, dev, n_classes, text_a = "text_a", label = "label", text_b = None, max_seq_len = 128))]
    fn from_tsv(
        train: &str,
        dev: &str,
        n_classes: usize,
        text_a: &str,
        label: &str,
        text_b: Option<&str>,
        max_seq_len: usize,
    ) -> PyResult<Self> {
        let schema = TsvSchema {
            text_a: text_a.into(),
            text_b: text_b.map(Into::into),
            label: label.into(),
            ..TsvSchema::default()
        };
        let data = data::Dataset {
            task: TaskInfo {
                n_classes,
                pair: text_b.is_some(),
                metric: Metric::Accuracy,
            },
            train: load_tsv(train, &schema).py()?,
            dev: load_tsv(dev, &schema).py()?,
            test: Vec::new(),
        };
        data.validate().py()?;
        let vocab = data.vocab();
        Ok(Self {
            data,
            vocab,
            max_seq_len,
        })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.data.task.n_classes
    }

    #[getter]
    fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// `(text_a, text_b, label, stratum)` tuples of a split.
    #[pyo3(signature = (split = "train"))]
    fn examples(&self, split: &str) -> PyResult<Vec<ExampleTuple>> {
        Ok(self.split(split)?.iter().map(example_tuple).collect())
    }

    /// Model config sized for this task.
    #[pyo3(signature = (n_layers = 4, hidden_size = 32, n_heads = 2, ffn_size = 64))]
    fn model_config(
        &self,
        n_layers: usize,
        hidden_size: usize,
        n_heads: usize,
        ffn_size: usize,
    ) -> PyResult<PyModelConfig> {
        PyModelConfig::new(
            self.vocab.len(),
            self.data.task.n_classes,
            self.max_seq_len,
            n_layers,
            hidden_size,
            n_heads,
            ffn_size,
            0.0,
        )
    }

    /// Token ids and segment ids of one input.
    #[pyo3(signature = (text_a, text_b = None))]
    fn encode(&self, text_a: &str, text_b: Option<&str>) -> (Vec<usize>, Vec<usize>) {
        let ex = Example {
            text_a: text_a.into(),
            text_b: text_b.map(Into::into),
            label: 0,
            stratum: None,
        };
        let e = data::tokenize(&ex, &self.vocab, self.max_seq_len);
        let n = e.real_len();
        (e.ids[..n].to_vec(), e.segments[..n].to_vec())
    }
}

#[pyclass(name = "ExitRecord", get_all)]
struct PyExitRecord {
    exit_layer: usize,
    entropy: f64,
    prediction: usize,
    probabilities: Vec<f64>,
    layers_executed: usize,
}

#[pymethods]
impl PyExitRecord {
    fn __repr__(&self) -> String {
        format!(
            "ExitRecord(exit_layer={}, entropy={:.6}, prediction={})",
            self.exit_layer, self.entropy, self.prediction
        )
    }
}

#[pyclass(name = "EarlyExitModel")]
struct PyModel {
    inner: model::EarlyExitModel,
}

fn single_input(ids: Vec<usize>, segments: Option<Vec<usize>>) -> PyResult<TokenBatch> {
    let n = ids.len();
    let segments = segments.unwrap_or_else(|| vec![0; n]);
    TokenBatch::new(1, n, ids, segments, vec![true; n]).py()
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 42))]
    fn new(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: model::EarlyExitModel::new(config.to_rust(), seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_model(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_model(&self.inner, path).py()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig::from(self.inner.config())
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn layer_executions(&self) -> u64 {
        self.inner.layer_executions()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.parameter_names().to_vec()
    }

    /// Values of one named parameter, flattened.
    fn parameter(&self, name: &str) -> PyResult<Vec<f64>> {
        let id = self
            .inner
            .parameter_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter `{name}`")))?;
        Ok(self.inner.parameters()[id].data().to_vec())
    }

    /// Logits of every ramp for one input.
    #[pyo3(signature = (ids, segments = None))]
    fn forward_all(
        &self,
        ids: Vec<usize>,
        segments: Option<Vec<usize>>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let input = single_input(ids, segments)?;
        Ok(self
            .inner
            .forward_all(&input)
            .py()?
            .into_iter()
            .map(|t| t.into_data())
            .collect())
    }

    /// Early-exit inference at entropy threshold `threshold`.
    #[pyo3(signature = (ids, segments = None, threshold = 0.0))]
    fn infer(
        &self,
        ids: Vec<usize>,
        segments: Option<Vec<usize>>,
        threshold: f64,
    ) -> PyResult<PyExitRecord> {
        let input = single_input(ids, segments)?;
        let r = inference::infer_early_exit(&self.inner, &input, ExitPolicy::new(threshold).py()?)
            .py()?;
        Ok(PyExitRecord {
            exit_layer: r.exit_layer,
            entropy: r.entropy,
            prediction: r.prediction,
            probabilities: r.probabilities,
            layers_executed: r.layers_executed,
        })
    }

    /// Stage one then stage two; returns the per-epoch losses of each stage.
    #[pyo3(signature = (dataset, epochs = 5, batch_size = 32, learning_rate = 1e-3, seed = 42, stage = None))]
    fn fit(
        &mut self,
        dataset: &PyDataset,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
        stage: Option<u8>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let train = &dataset.data.train;
        let mut losses = Vec::new();
        if stage.is_none_or(|s| s == 1) {
            losses.push(
                training::stage_one(&mut self.inner, train, &dataset.vocab, &config)
                    .py()?
                    .epoch_losses,
            );
        }
        if stage.is_none_or(|s| s == 2) {
            losses.push(
                training::stage_two(&mut self.inner, train, &dataset.vocab, &config)
                    .py()?
                    .epoch_losses,
            );
        }
        if losses.is_empty() {
            return Err(PyValueError::new_err("stage must be 1, 2 or None"));
        }
        Ok(losses)
    }

    /// Forced-exit quality of every ramp on a split.
    #[pyo3(signature = (dataset, split = "dev"))]
    fn layerwise_quality(&self, dataset: &PyDataset, split: &str) -> PyResult<Vec<f64>> {
        metrics::layerwise_quality(
            &self.inner,
            &dataset.samples(split)?,
            dataset.data.task.metric,
        )
        .py()
    }

    /// `(S, quality, expected_saving, exit_counts)` for every threshold.
    #[pyo3(signature = (dataset, grid = None, split = "dev"))]
    fn sweep(
        &self,
        dataset: &PyDataset,
        grid: Option<Vec<f64>>,
        split: &str,
    ) -> PyResult<Vec<SweepRow>> {
        let grid = grid.unwrap_or_else(|| default_grid(self.inner.n_classes()));
        let report = metrics::sweep(
            &self.inner,
            &dataset.samples(split)?,
            &grid,
            dataset.data.task.metric,
            SweepOptions::default(),
        )
        .py()?;
        Ok(report
            .points
            .into_iter()
            .map(|p| {
                (
                    p.threshold,
                    p.quality,
                    p.expected_saving,
                    p.histogram.counts().to_vec(),
                )
            })
            .collect())
    }
}

#[pymodule]
fn early_exit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(expected_saving, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_grid, m)?)?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyExitRecord>()?;
    Ok(())
}
