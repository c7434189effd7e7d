//! Command-line front end: `train`, `sweep`, `analyze` and `eval`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{Dataset, Example, Stratum, Vocab};
use crate::inference::{
    encode_samples, infer_batch, write_records_csv, write_records_jsonl, EncodedSample, ExitPolicy,
    ThresholdedRecord,
};
use crate::metrics::{
    exit_distribution, expected_saving, layerwise_quality, linear_fit, mean_exit_by_stratum,
    measured_vs_expected, quality, select_operating_point, sweep, write_histograms_csv,
    write_layerwise_csv, write_savings_csv, write_sweep_csv, LinearFit, Metric, SweepOptions,
    TradeoffPoint,
};
use crate::model::{load_model, save_model, EarlyExitModel};
use crate::training::{stage_one, stage_two, TrainReport};

pub const STAGE1_CHECKPOINT: &str = "stage1.ckpt";
pub const STAGE2_CHECKPOINT: &str = "stage2.ckpt";

#[derive(Debug, Parser)]
#[command(
    name = "early-exit",
    version,
    about = "Entropy-gated early-exit transformer classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-stage fine-tuning; writes stage1.ckpt, stage2.ckpt and train_report.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = StageArg::All)]
        stage: StageArg,
    },
    /// Threshold sweep; writes sweep.csv, sweep.json, exits.jsonl and operating_points.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated entropy thresholds starting at 0.
        #[arg(long, value_delimiter = ',')]
        threshold_grid: Option<Vec<f64>>,
    },
    /// Layerwise quality, exit histograms or expected-vs-measured savings.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        #[arg(long, value_delimiter = ',')]
        threshold_grid: Option<Vec<f64>>,
    },
    /// Early-exit evaluation at one threshold; writes eval.json and eval_exits.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        threshold: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, short)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; falls back to the config, then $EARLY_EXIT_OUT, then ./runs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Defaults to <out>/stage2.ckpt.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    Layers,
    Exits,
    ExpectedVsMeasured,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Dev,
    Test,
}

/// Config, data and output directory of one invocation.
struct Session {
    config: RunConfig,
    data: Dataset,
    vocab: Vocab,
    out: PathBuf,
}

impl Session {
    fn open(common: &Common) -> anyhow::Result<Self> {
        let mut config = RunConfig::load(&common.config)
            .with_context(|| format!("reading config {}", common.config.display()))?;
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        let out = config.resolve_output_dir(common.out.as_deref());
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let data = config.load_dataset()?;
        let vocab = data.vocab();
        Ok(Self {
            config,
            data,
            vocab,
            out,
        })
    }

    fn split(&self, split: Split) -> anyhow::Result<&[Example]> {
        let examples = match split {
            Split::Dev => &self.data.dev,
            Split::Test => &self.data.test,
        };
        if examples.is_empty() {
            bail!("the {split:?} split is empty");
        }
        Ok(examples)
    }

    fn samples(&self, split: Split) -> anyhow::Result<(Vec<EncodedSample>, Vec<Option<Stratum>>)> {
        let examples = self.split(split)?;
        let samples = encode_samples(examples, &self.vocab, self.config.max_seq_len());
        let strata = examples.iter().map(|e| e.stratum).collect();
        Ok((samples, strata))
    }

    fn load_checkpoint(&self, explicit: Option<&Path>) -> anyhow::Result<EarlyExitModel> {
        let path = explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out.join(STAGE2_CHECKPOINT));
        let model =
            load_model(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
        let expected = self.config.model_config(&self.data, &self.vocab)?;
        if model.config().vocab_size != expected.vocab_size
            || model.config().n_classes != expected.n_classes
        {
            bail!(
                "checkpoint {} was trained on a different task (vocab {}, classes {}; task has vocab {}, classes {})",
                path.display(),
                model.config().vocab_size,
                model.config().n_classes,
                expected.vocab_size,
                expected.n_classes
            );
        }
        Ok(model)
    }

    fn grid(&self, explicit: Option<&[f64]>) -> Vec<f64> {
        explicit
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| self.config.grid(self.data.task.n_classes))
    }

    fn metric(&self) -> Metric {
        self.data.task.metric
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[derive(Debug, Serialize)]
struct OperatingPoint {
    max_drop: f64,
    point: Option<TradeoffPoint>,
    quality_drop: Option<f64>,
    mean_exit_layer: BTreeMap<Stratum, f64>,
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    threshold: f64,
    metric: Metric,
    quality: f64,
    expected_saving: f64,
    exit_counts: Vec<u64>,
    mean_exit_layer: BTreeMap<Stratum, f64>,
    wall_clock_s: f64,
}

#[derive(Debug, Serialize)]
struct SavingsSummary {
    fit: LinearFit,
    layer_saving_equals_expected: bool,
}

fn cmd_train(common: &Common, stage: StageArg) -> anyhow::Result<()> {
    let s = Session::open(common)?;
    let train_cfg = s.config.train_config();
    let mut stages = Vec::new();
    let mut model = match stage {
        StageArg::Two => load_model(s.out.join(STAGE1_CHECKPOINT))
            .context("stage 2 needs the stage-1 checkpoint; run `train --stage 1` first")?,
        _ => EarlyExitModel::new(s.config.model_config(&s.data, &s.vocab)?, s.config.seed)?,
    };
    if stage != StageArg::Two {
        let r = stage_one(&mut model, &s.data.train, &s.vocab, &train_cfg)?;
        eprintln!("stage 1: epoch losses {:?}", r.epoch_losses);
        stages.push(r);
        save_model(&model, s.out.join(STAGE1_CHECKPOINT))?;
    }
    if stage != StageArg::One {
        let r = stage_two(&mut model, &s.data.train, &s.vocab, &train_cfg)?;
        eprintln!("stage 2: epoch losses {:?}", r.epoch_losses);
        stages.push(r);
        save_model(&model, s.out.join(STAGE2_CHECKPOINT))?;
    }
    let dev_layerwise_quality = if s.data.dev.is_empty() {
        Vec::new()
    } else {
        let (samples, _) = s.samples(Split::Dev)?;
        layerwise_quality(&model, &samples, s.metric())?
    };
    let report = TrainReport {
        stages,
        dev_layerwise_quality,
    };
    let path = s.write_json("train_report.json", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(common: &Common, eval: &EvalArgs, grid: Option<&[f64]>) -> anyhow::Result<()> {
    let s = Session::open(common)?;
    let model = s.load_checkpoint(eval.checkpoint.as_deref())?;
    let (samples, strata) = s.samples(eval.split)?;
    let grid = s.grid(grid);
    let options = SweepOptions {
        timing_repeats: s.config.sweep.timing_repeats,
    };
    let report = sweep(&model, &samples, &grid, s.metric(), options)?;

    write_sweep_csv(s.out.join("sweep.csv"), &report)?;
    s.write_json("sweep.json", &report)?;
    let tagged: Vec<ThresholdedRecord> = grid
        .iter()
        .zip(&report.records)
        .flat_map(|(&threshold, records)| {
            records.iter().map(move |r| ThresholdedRecord {
                threshold,
                record: r.clone(),
            })
        })
        .collect();
    write_records_jsonl(s.out.join("exits.jsonl"), &tagged)?;

    let mut operating = Vec::new();
    for &max_drop in &s.config.sweep.max_drops {
        let chosen = select_operating_point(&report, max_drop);
        let mean_exit_layer = match chosen {
            Some(p) => {
                let k = report
                    .points
                    .iter()
                    .position(|q| q.threshold == p.threshold)
                    .unwrap();
                mean_exit_by_stratum(&report.records[k], &strata)?
            }
            None => BTreeMap::new(),
        };
        operating.push(OperatingPoint {
            max_drop,
            quality_drop: chosen.map(|p| report.quality_drop(p)),
            point: chosen.cloned(),
            mean_exit_layer,
        });
    }
    s.write_json("operating_points.json", &operating)?;

    println!("S\tquality\texpected_saving");
    for p in &report.points {
        println!(
            "{:.4}\t{:.4}\t{:.4}",
            p.threshold, p.quality, p.expected_saving
        );
    }
    println!("wrote sweep outputs to {}", s.out.display());
    Ok(())
}

fn cmd_analyze(
    common: &Common,
    eval: &EvalArgs,
    mode: AnalyzeMode,
    grid: Option<&[f64]>,
) -> anyhow::Result<()> {
    let s = Session::open(common)?;
    let model = s.load_checkpoint(eval.checkpoint.as_deref())?;
    let (samples, _) = s.samples(eval.split)?;
    let grid = s.grid(grid);
    let path = match mode {
        AnalyzeMode::Layers => {
            let q = layerwise_quality(&model, &samples, s.metric())?;
            let path = s.out.join("layerwise.csv");
            write_layerwise_csv(&path, &q)?;
            path
        }
        AnalyzeMode::Exits => {
            let mut rows = Vec::with_capacity(grid.len());
            for &threshold in &grid {
                let run = infer_batch(&model, &samples, ExitPolicy::new(threshold)?)?;
                rows.push((
                    threshold,
                    exit_distribution(&run.records, model.n_layers())?,
                ));
            }
            let path = s.out.join("histograms.csv");
            write_histograms_csv(&path, &rows)?;
            path
        }
        AnalyzeMode::ExpectedVsMeasured => {
            let pairs =
                measured_vs_expected(&model, &samples, &grid, s.config.sweep.timing_repeats)?;
            let path = s.out.join("savings.csv");
            write_savings_csv(&path, &pairs)?;
            let xs: Vec<f64> = pairs.iter().map(|p| p.expected_saving).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.measured_saving).collect();
            match linear_fit(&xs, &ys) {
                Ok(fit) => {
                    println!(
                        "measured ≈ {:.4} · expected + {:.4}, R² = {:.4}",
                        fit.slope, fit.intercept, fit.r_squared
                    );
                    let summary = SavingsSummary {
                        fit,
                        layer_saving_equals_expected: pairs
                            .iter()
                            .all(|p| p.layer_saving == p.expected_saving),
                    };
                    s.write_json("savings_fit.json", &summary)?;
                }
                Err(e) => eprintln!("no linear fit: {e}"),
            }
            path
        }
    };
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_eval(common: &Common, eval: &EvalArgs, threshold: f64) -> anyhow::Result<()> {
    let s = Session::open(common)?;
    let model = s.load_checkpoint(eval.checkpoint.as_deref())?;
    let (samples, strata) = s.samples(eval.split)?;
    let run = infer_batch(&model, &samples, ExitPolicy::new(threshold)?)?;
    let preds: Vec<usize> = run.records.iter().map(|r| r.prediction).collect();
    let labels: Vec<usize> = samples.iter().map(|r| r.label).collect();
    let hist = exit_distribution(&run.records, model.n_layers())?;
    let summary = EvalSummary {
        threshold,
        metric: s.metric(),
        quality: quality(&preds, &labels, s.metric())?,
        expected_saving: expected_saving(&hist)?,
        exit_counts: hist.counts().to_vec(),
        mean_exit_layer: mean_exit_by_stratum(&run.records, &strata)?,
        wall_clock_s: run.wall_clock.as_secs_f64(),
    };
    write_records_csv(s.out.join("eval_exits.csv"), &run.records)?;
    s.write_json("eval.json", &summary)?;
    println!(
        "S = {threshold}: {:?} {:.4}, expected saving {:.4}, exits {:?}",
        summary.metric, summary.quality, summary.expected_saving, summary.exit_counts
    );
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { common, stage } => cmd_train(common, *stage),
        Command::Sweep {
            common,
            eval,
            threshold_grid,
        } => cmd_sweep(common, eval, threshold_grid.as_deref()),
        Command::Analyze {
            common,
            eval,
            mode,
            threshold_grid,
        } => cmd_analyze(common, eval, *mode, threshold_grid.as_deref()),
        Command::Eval {
            common,
            eval,
            threshold,
        } => cmd_eval(common, eval, *threshold),
    }
}
