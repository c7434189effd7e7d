use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExitRecord;
use crate::error::Result;

/// An exit record tagged with the threshold that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedRecord {
    pub threshold: f64,
    #[serde(flatten)]
    pub record: ExitRecord,
}

/// One JSON object per line.
pub fn write_records_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Columns: `sample_id, exit_layer, entropy, prediction, label`.
pub fn write_records_csv(path: impl AsRef<Path>, records: &[ExitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "exit_layer", "entropy", "prediction", "label"])?;
    for r in records {
        w.write_record([
            r.sample_id.to_string(),
            r.exit_layer.to_string(),
            r.entropy.to_string(),
            r.prediction.to_string(),
            r.label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
