//! JSON documents and small CSV reports.

use std::path::Path;

use morphoml_core::evaluation::{MetricReport, PairedComparison};
use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Rows are truth, columns predictions.
pub fn write_confusion_csv(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::io::manifest::csv_file_err(path))?;
    w.write_record(std::iter::once("truth\\predicted").chain(report.class_names.iter().map(String::as_str)))?;
    for (name, row) in report.class_names.iter().zip(&report.confusion) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(usize::to_string)))?;
    }
    w.flush().map_err(Error::io(path))
}

pub const COMPARISON_HEADER: [&str; 9] =
    ["comparison", "difference", "ci95_lo", "ci95_hi", "ci90_lo", "ci90_hi", "delta", "equivalent", "conclusion"];

/// One statistical row per comparison, appended under a shared header.
pub fn write_comparison_csv(path: &Path, rows: &[(String, PairedComparison)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::io::manifest::csv_file_err(path))?;
    w.write_record(COMPARISON_HEADER)?;
    for (name, c) in rows {
        w.write_record([
            name.clone(),
            format!("{:.4}", c.difference),
            format!("{:.4}", c.ci95.0),
            format!("{:.4}", c.ci95.1),
            format!("{:.4}", c.ci90.0),
            format!("{:.4}", c.ci90.1),
            c.delta.to_string(),
            c.equivalent.to_string(),
            c.conclusion.clone(),
        ])?;
    }
    w.flush().map_err(Error::io(path))
}
