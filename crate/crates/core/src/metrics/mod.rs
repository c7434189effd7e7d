//! Expected saving, output quality, threshold sweeps and layerwise analyses.

mod report;
mod sweep;

pub use report::{
    write_histograms_csv, write_layerwise_csv, write_savings_csv, write_sweep_csv, SWEEP_CSV_HEADER,
};
pub use sweep::{
    default_grid, layerwise_quality, linear_fit, measured_vs_expected, select_operating_point,
    select_operating_points, sweep, LinearFit, SavingPair, SweepOptions, SweepReport,
    TradeoffPoint,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Stratum;
use crate::error::{Error, Result};
use crate::inference::ExitRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    /// F1 of the positive class (label 1) of a binary task.
    BinaryF1,
}

/// `N_i`: number of samples that exited at layer `i` (1-based), for
/// `i = 1..=n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitHistogram {
    counts: Vec<u64>,
}

impl ExitHistogram {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("histogram needs at least one layer"));
        }
        Ok(Self { counts })
    }

    pub fn n_layers(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `N_i` for 1-based `layer`.
    pub fn count(&self, layer: usize) -> u64 {
        self.counts[layer - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// `Σ i · N_i`: encoder layers executed by early exiting.
    pub fn layers_executed(&self) -> u64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as u64 + 1) * c)
            .sum()
    }
}

/// Counts records by exit layer.
pub fn exit_distribution(records: &[ExitRecord], n_layers: usize) -> Result<ExitHistogram> {
    if records.is_empty() {
        return Err(Error::invalid("exit distribution of no records"));
    }
    let mut counts = vec![0u64; n_layers];
    for r in records {
        if r.exit_layer == 0 || r.exit_layer > n_layers {
            return Err(Error::invalid(format!(
                "record {} exits at layer {} outside 1..={n_layers}",
                r.sample_id, r.exit_layer
            )));
        }
        counts[r.exit_layer - 1] += 1;
    }
    ExitHistogram::new(counts)
}

/// Fraction of layer executions saved when `executed` layers ran for
/// `samples` samples of an `n`-layer model: `1 − executed / (n · samples)`.
/// The subtraction happens in integers so the result is one correctly
/// rounded division.
pub fn saving_from_counts(executed: u64, n_layers: usize, samples: u64) -> Result<f64> {
    let full = n_layers as u128 * samples as u128;
    if full == 0 {
        return Err(Error::invalid("saving over zero samples"));
    }
    let executed = executed as u128;
    if executed > full {
        return Err(Error::invalid(format!(
            "{executed} layer executions exceed the full-model {full}"
        )));
    }
    Ok((full - executed) as f64 / full as f64)
}

/// `1 − Σ i·N_i / Σ n·N_i`.
pub fn expected_saving(hist: &ExitHistogram) -> Result<f64> {
    if hist.total() == 0 {
        return Err(Error::invalid("expected saving of an empty histogram"));
    }
    saving_from_counts(hist.layers_executed(), hist.n_layers(), hist.total())
}

/// Mean exit layer of each stratum present in `strata`, which is aligned
/// with `records`. Samples without a stratum are skipped.
pub fn mean_exit_by_stratum(
    records: &[ExitRecord],
    strata: &[Option<Stratum>],
) -> Result<BTreeMap<Stratum, f64>> {
    if records.len() != strata.len() {
        return Err(Error::shape(
            "mean_exit_by_stratum",
            &[records.len()],
            &[strata.len()],
        ));
    }
    let mut sums: BTreeMap<Stratum, (u64, u64)> = BTreeMap::new();
    for (r, s) in records.iter().zip(strata) {
        if let Some(s) = s {
            let e = sums.entry(*s).or_default();
            e.0 += r.exit_layer as u64;
            e.1 += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(s, (total, count))| (s, total as f64 / count as f64))
        .collect())
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::invalid("quality of an empty prediction set"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "quality",
            &[predictions.len()],
            &[labels.len()],
        ));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Positive-class F1. Precision or recall with a zero denominator count
/// as 0, and so does F1 when both are 0.
pub fn binary_f1(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if predictions.iter().chain(labels).any(|&v| v > 1) {
        return Err(Error::invalid("binary F1 requires labels in {0, 1}"));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

pub fn quality(predictions: &[usize], labels: &[usize], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(predictions, labels),
        Metric::BinaryF1 => binary_f1(predictions, labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(layer: usize) -> ExitRecord {
        ExitRecord {
            sample_id: 0,
            exit_layer: layer,
            entropy: 0.0,
            prediction: 0,
            probabilities: vec![1.0, 0.0],
            layers_executed: layer,
            label: None,
        }
    }

    fn hist12(pairs: &[(usize, u64)]) -> ExitHistogram {
        let mut counts = vec![0u64; 12];
        for &(layer, c) in pairs {
            counts[layer - 1] = c;
        }
        ExitHistogram::new(counts).unwrap()
    }

    #[test]
    fn expected_saving_closed_forms() {
        assert_eq!(expected_saving(&hist12(&[(12, 100)])).unwrap(), 0.0);
        let all_first = expected_saving(&hist12(&[(1, 100)])).unwrap();
        assert_eq!(all_first, 11.0 / 12.0);
        assert!((all_first - 0.91667).abs() < 5e-6);
        assert_eq!(
            expected_saving(&hist12(&[(6, 50), (12, 50)])).unwrap(),
            0.25
        );
    }

    #[test]
    fn expected_saving_rejects_empty_histogram() {
        assert!(expected_saving(&ExitHistogram::new(vec![0; 4]).unwrap()).is_err());
        assert!(ExitHistogram::new(vec![]).is_err());
    }

    #[test]
    fn quality_cases() {
        assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(binary_f1(&[0, 1, 1], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(binary_f1(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        // tp 2, fp 1, fn 0: precision 2/3, recall 1
        let f1 = binary_f1(&[1, 1, 0, 1], &[1, 0, 0, 1]).unwrap();
        assert!((f1 - 0.8).abs() < 1e-12);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 0]).is_err());
        assert!(binary_f1(&[2], &[1]).is_err());
        assert_eq!(quality(&[1, 0], &[1, 1], Metric::Accuracy).unwrap(), 0.5);
    }

    #[test]
    fn stratum_means() {
        let records = [record(1), record(3), record(4), record(2)];
        let strata = [
            Some(Stratum::Easy),
            Some(Stratum::Hard),
            Some(Stratum::Hard),
            None,
        ];
        let m = mean_exit_by_stratum(&records, &strata).unwrap();
        assert_eq!(m[&Stratum::Easy], 1.0);
        assert_eq!(m[&Stratum::Hard], 3.5);
        assert!(mean_exit_by_stratum(&records, &strata[..2]).is_err());
    }

    #[test]
    fn exit_distribution_cases() {
        let h = exit_distribution(&[record(3)], 4).unwrap();
        assert_eq!(h.counts(), &[0, 0, 1, 0]);
        let h = exit_distribution(&vec![record(4); 10], 4).unwrap();
        assert_eq!(h.counts(), &[0, 0, 0, 10]);
        assert_eq!(h.fractions(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(exit_distribution(&[], 4).is_err());
        assert!(exit_distribution(&[record(5)], 4).is_err());
    }

    proptest! {
        #[test]
        fn histogram_conserves_records(layers in proptest::collection::vec(1usize..=6, 1..300)) {
            let records: Vec<ExitRecord> = layers.iter().map(|&l| record(l)).collect();
            let h = exit_distribution(&records, 6).unwrap();
            prop_assert_eq!(h.total(), records.len() as u64);
            let f: f64 = h.fractions().iter().sum();
            prop_assert!((f - 1.0).abs() < 1e-12);
        }

        #[test]
        fn expected_saving_stays_in_unit_interval(counts in proptest::collection::vec(0u64..1000, 1..24)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let n = counts.len();
            let s = expected_saving(&ExitHistogram::new(counts).unwrap()).unwrap();
            prop_assert!(s >= 0.0);
            prop_assert!(s <= 1.0 - 1.0 / n as f64 + 1e-15);
        }
    }
}
