use std::path::Path;

use super::{ExitHistogram, SavingPair, SweepReport};
use crate::error::Result;

pub const SWEEP_CSV_HEADER: [&str; 7] = [
    "S",
    "accuracy",
    "f1",
    "expected_saving",
    "layer_saving",
    "time_saving_pct",
    "wall_clock_s",
];

/// One row per grid point; `f1` is empty for non-binary tasks.
pub fn write_sweep_csv(path: impl AsRef<Path>, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_CSV_HEADER)?;
    for p in &report.points {
        w.write_record([
            p.threshold.to_string(),
            p.accuracy.to_string(),
            p.f1.map(|f| f.to_string()).unwrap_or_default(),
            p.expected_saving.to_string(),
            p.layer_execution_saving.to_string(),
            (p.measured_time_saving * 100.0).to_string(),
            p.wall_clock_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `layer, quality`.
pub fn write_layerwise_csv(path: impl AsRef<Path>, qualities: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["layer", "quality"])?;
    for (i, q) in qualities.iter().enumerate() {
        w.write_record([(i + 1).to_string(), q.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: `S, layer, count, fraction`, one row per (threshold, layer).
pub fn write_histograms_csv(path: impl AsRef<Path>, rows: &[(f64, ExitHistogram)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["S", "layer", "count", "fraction"])?;
    for (s, hist) in rows {
        for (i, (count, fraction)) in hist.counts().iter().zip(hist.fractions()).enumerate() {
            w.write_record([
                s.to_string(),
                (i + 1).to_string(),
                count.to_string(),
                fraction.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns: `S, expected_saving, layer_saving, measured_saving`.
pub fn write_savings_csv(path: impl AsRef<Path>, pairs: &[SavingPair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["S", "expected_saving", "layer_saving", "measured_saving"])?;
    for p in pairs {
        w.write_record([
            p.threshold.to_string(),
            p.expected_saving.to_string(),
            p.layer_saving.to_string(),
            p.measured_saving.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
