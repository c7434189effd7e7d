use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Example, Stratum};
use crate::error::{Error, Result};

/// Column names of a tab-separated file with a header row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsvSchema {
    pub text_a: String,
    #[serde(default)]
    pub text_b: Option<String>,
    pub label: String,
    /// Label strings in class-id order. When absent, labels are integers.
    #[serde(default)]
    pub label_names: Option<Vec<String>>,
    #[serde(default)]
    pub stratum: Option<String>,
}

impl Default for TsvSchema {
    fn default() -> Self {
        Self {
            text_a: "text_a".into(),
            text_b: None,
            label: "label".into(),
            label_names: None,
            stratum: None,
        }
    }
}

impl TsvSchema {
    fn parse_label(&self, raw: &str) -> Option<usize> {
        match &self.label_names {
            Some(names) => names.iter().position(|n| n == raw),
            None => raw.parse().ok(),
        }
    }

    fn format_label(&self, label: usize) -> String {
        match &self.label_names {
            Some(names) => names
                .get(label)
                .cloned()
                .unwrap_or_else(|| label.to_string()),
            None => label.to_string(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("missing column `{name}` in header"),
        })
}

/// Reads one split. Line numbers in errors count the header as line 1.
pub fn load_tsv(path: impl AsRef<Path>, schema: &TsvSchema) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let a_col = column(&headers, &schema.text_a, path)?;
    let b_col = schema
        .text_b
        .as_deref()
        .map(|n| column(&headers, n, path))
        .transpose()?;
    let label_col = column(&headers, &schema.label, path)?;
    let stratum_col = schema
        .stratum
        .as_deref()
        .map(|n| column(&headers, n, path))
        .transpose()?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 2, |p| p.line() as usize);
        let fail = |reason: String| Error::Data {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let field = |col: usize, name: &str| {
            record
                .get(col)
                .ok_or_else(|| fail(format!("row has no `{name}` column")))
        };

        let text_a = field(a_col, &schema.text_a)?;
        if text_a.trim().is_empty() {
            return Err(fail("empty text_a".into()));
        }
        let text_b = match (b_col, &schema.text_b) {
            (Some(c), Some(name)) => Some(field(c, name)?.to_string()),
            _ => None,
        };
        let raw_label = field(label_col, &schema.label)?;
        let label = schema
            .parse_label(raw_label)
            .ok_or_else(|| fail(format!("unknown label `{raw_label}`")))?;
        let stratum = match (stratum_col, &schema.stratum) {
            (Some(c), Some(name)) => {
                let raw = field(c, name)?;
                Some(Stratum::parse(raw).ok_or_else(|| fail(format!("unknown stratum `{raw}`")))?)
            }
            _ => None,
        };
        out.push(Example {
            text_a: text_a.to_string(),
            text_b,
            label,
            stratum,
        });
    }
    Ok(out)
}

pub fn write_tsv(path: impl AsRef<Path>, examples: &[Example], schema: &TsvSchema) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path.as_ref())?;
    let mut header = vec![schema.text_a.as_str()];
    header.extend(schema.text_b.as_deref());
    header.push(schema.label.as_str());
    header.extend(schema.stratum.as_deref());
    writer.write_record(&header)?;

    for ex in examples {
        let mut row = vec![ex.text_a.clone()];
        if schema.text_b.is_some() {
            row.push(ex.text_b.clone().unwrap_or_default());
        }
        row.push(schema.format_label(ex.label));
        if schema.stratum.is_some() {
            row.push(ex.stratum.map(Stratum::as_str).unwrap_or("").to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_rows_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(
            &path,
            "sentence\tlabel\nhello there\t1\nbad\t0\nok then\t1\n",
        )
        .unwrap();
        let schema = TsvSchema {
            text_a: "sentence".into(),
            ..TsvSchema::default()
        };
        let rows = load_tsv(&path, &schema).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].text_a, "hello there");
        assert_eq!(rows[1].label, 0);
        assert_eq!(rows[2].text_a, "ok then");
    }

    #[test]
    fn empty_text_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "text_a\tlabel\nfine\t0\n\t1\n").unwrap();
        let err = load_tsv(&path, &TsvSchema::default()).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_unknown_label_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "text\tlabel\nfine\t0\n").unwrap();
        let err = load_tsv(&path, &TsvSchema::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing column `text_a`"), "{err}");

        std::fs::write(&path, "text_a\tlabel\nfine\tpositive\n").unwrap();
        let schema = TsvSchema {
            label_names: Some(vec!["negative".into(), "neutral".into()]),
            ..TsvSchema::default()
        };
        let err = load_tsv(&path, &schema).unwrap_err().to_string();
        assert!(
            err.contains(":2:") && err.contains("unknown label `positive`"),
            "{err}"
        );
    }

    #[test]
    fn write_then_read_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        let schema = TsvSchema {
            text_a: "question".into(),
            text_b: Some("sentence".into()),
            label: "label".into(),
            label_names: Some(vec!["not_entailment".into(), "entailment".into()]),
            stratum: Some("stratum".into()),
        };
        let rows = vec![
            Example {
                text_a: "what is it".into(),
                text_b: Some("it is this".into()),
                label: 1,
                stratum: Some(Stratum::Hard),
            },
            Example {
                text_a: "why".into(),
                text_b: Some("because".into()),
                label: 0,
                stratum: Some(Stratum::Easy),
            },
        ];
        write_tsv(&path, &rows, &schema).unwrap();
        assert_eq!(load_tsv(&path, &schema).unwrap(), rows);
    }
}
