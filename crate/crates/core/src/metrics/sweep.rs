use serde::{Deserialize, Serialize};

use super::{
    accuracy, binary_f1, exit_distribution, expected_saving, quality, saving_from_counts,
    ExitHistogram, Metric,
};
use crate::error::{Error, Result};
use crate::inference::{infer_batch, infer_forced_exit, EncodedSample, ExitPolicy, ExitRecord};
use crate::model::EarlyExitModel;

const GRID_MIN: f64 = 0.005;
const GRID_POINTS: usize = 21;

/// `{0}` followed by 20 geometrically spaced thresholds from 0.005 to
/// `ln(n_classes)`.
pub fn default_grid(n_classes: usize) -> Vec<f64> {
    let top = (n_classes as f64).ln();
    let steps = GRID_POINTS - 2;
    let mut grid = vec![0.0];
    grid.extend((0..=steps).map(|k| GRID_MIN * (top / GRID_MIN).powf(k as f64 / steps as f64)));
    *grid.last_mut().unwrap() = top;
    grid
}

/// One threshold's quality and savings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub threshold: f64,
    /// Value of the task's primary metric.
    pub quality: f64,
    pub accuracy: f64,
    /// Only for binary tasks.
    pub f1: Option<f64>,
    pub expected_saving: f64,
    /// From the model's layer-execution counter.
    pub layer_execution_saving: f64,
    /// `1 − t(S) / t(0)`.
    pub measured_time_saving: f64,
    pub wall_clock_s: f64,
    pub histogram: ExitHistogram,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub n_layers: usize,
    pub metric: Metric,
    pub baseline_quality: f64,
    pub baseline_time_s: f64,
    pub points: Vec<TradeoffPoint>,
    /// Exit records of every grid point, in grid order.
    #[serde(skip)]
    pub records: Vec<Vec<ExitRecord>>,
}

impl SweepReport {
    /// Quality drop of `point` from the `S = 0` baseline, in percentage points.
    pub fn quality_drop(&self, point: &TradeoffPoint) -> f64 {
        (self.baseline_quality - point.quality) * 100.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepOptions {
    /// Each grid point is timed this many times (interleaved across the
    /// grid) and the fastest run is kept.
    pub timing_repeats: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { timing_repeats: 1 }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    match grid.first() {
        Some(&0.0) => {}
        _ => {
            return Err(Error::invalid(
                "threshold grid must start with the S = 0 baseline",
            ))
        }
    }
    if grid.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("threshold grid must be finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("threshold grid must be strictly increasing"));
    }
    Ok(())
}

/// Early-exit evaluation of `samples` at every threshold of `grid`.
///
/// Samples run one at a time, serially. The layer-execution saving is read
/// from the model's instrumented counter, so other concurrent users of the
/// same model would skew it.
pub fn sweep(
    model: &EarlyExitModel,
    samples: &[EncodedSample],
    grid: &[f64],
    metric: Metric,
    options: SweepOptions,
) -> Result<SweepReport> {
    check_grid(grid)?;
    if samples.is_empty() {
        return Err(Error::invalid("sweep over an empty evaluation set"));
    }
    let n = model.n_layers();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let binary = model.n_classes() == 2;
    let policies = grid
        .iter()
        .map(|&s| ExitPolicy::new(s))
        .collect::<Result<Vec<_>>>()?;

    let mut best_time = vec![f64::INFINITY; grid.len()];
    let mut records: Vec<Vec<ExitRecord>> = vec![Vec::new(); grid.len()];
    let mut executed = vec![0u64; grid.len()];
    for repeat in 0..options.timing_repeats.max(1) {
        for (k, policy) in policies.iter().enumerate() {
            let before = model.layer_executions();
            let run = infer_batch(model, samples, *policy)?;
            let counted = model.layer_executions() - before;
            best_time[k] = best_time[k].min(run.wall_clock.as_secs_f64());
            if repeat == 0 {
                executed[k] = counted;
                records[k] = run.records;
            }
        }
    }

    let mut points = Vec::with_capacity(grid.len());
    for (k, &threshold) in grid.iter().enumerate() {
        let preds: Vec<usize> = records[k].iter().map(|r| r.prediction).collect();
        let histogram = exit_distribution(&records[k], n)?;
        points.push(TradeoffPoint {
            threshold,
            quality: quality(&preds, &labels, metric)?,
            accuracy: accuracy(&preds, &labels)?,
            f1: if binary {
                Some(binary_f1(&preds, &labels)?)
            } else {
                None
            },
            expected_saving: expected_saving(&histogram)?,
            layer_execution_saving: saving_from_counts(executed[k], n, samples.len() as u64)?,
            measured_time_saving: 1.0 - best_time[k] / best_time[0],
            wall_clock_s: best_time[k],
            histogram,
        });
    }

    Ok(SweepReport {
        n_layers: n,
        metric,
        baseline_quality: points[0].quality,
        baseline_time_s: best_time[0],
        points,
        records,
    })
}

/// Highest expected saving among points whose quality drop is within
/// `max_drop` points; ties go to the larger threshold.
pub fn select_operating_point(report: &SweepReport, max_drop: f64) -> Option<&TradeoffPoint> {
    let mut best: Option<&TradeoffPoint> = None;
    for p in &report.points {
        if report.quality_drop(p) > max_drop {
            continue;
        }
        best = match best {
            Some(b)
                if b.expected_saving > p.expected_saving
                    || (b.expected_saving == p.expected_saving && b.threshold > p.threshold) =>
            {
                Some(b)
            }
            _ => Some(p),
        };
    }
    best
}

/// [`select_operating_point`] for each budget.
pub fn select_operating_points(
    report: &SweepReport,
    budgets: &[f64],
) -> Vec<Option<TradeoffPoint>> {
    budgets
        .iter()
        .map(|&b| select_operating_point(report, b).cloned())
        .collect()
}

/// Quality of every ramp when all samples are forced to exit there.
pub fn layerwise_quality(
    model: &EarlyExitModel,
    samples: &[EncodedSample],
    metric: Metric,
) -> Result<Vec<f64>> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    (1..=model.n_layers())
        .map(|layer| quality(&infer_forced_exit(model, samples, layer)?, &labels, metric))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingPair {
    pub threshold: f64,
    pub expected_saving: f64,
    pub layer_saving: f64,
    pub measured_saving: f64,
}

/// Expected vs wall-clock saving for every grid threshold.
pub fn measured_vs_expected(
    model: &EarlyExitModel,
    samples: &[EncodedSample],
    grid: &[f64],
    timing_repeats: usize,
) -> Result<Vec<SavingPair>> {
    let report = sweep(
        model,
        samples,
        grid,
        Metric::Accuracy,
        SweepOptions { timing_repeats },
    )?;
    Ok(report
        .points
        .iter()
        .map(|p| SavingPair {
            threshold: p.threshold,
            expected_saving: p.expected_saving,
            layer_saving: p.layer_execution_saving,
            measured_saving: p.measured_time_saving,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(
            "linear fit needs at least two paired points",
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("linear fit over a constant x series"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}
