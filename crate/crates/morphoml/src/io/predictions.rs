//! Case-level prediction CSVs.
//!
//! Leading `# key: value` lines carry provenance. `# classes:` lists the
//! label order; probability columns are `p_<class>` and may be absent
//! (e.g. pathologist calls).

use std::collections::BTreeMap;
use std::path::Path;

use morphoml_core::evaluation::{PredictionRow, PredictionSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub set: PredictionSet,
    pub meta: BTreeMap<String, String>,
}

pub fn write_predictions(path: &Path, set: &PredictionSet, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push_str(&format!("# classes: {}\n", set.class_names.join(",")));
    let with_probs = !set.is_empty() && set.rows.iter().all(|r| r.probabilities.is_some());
    let mut header = vec!["case_id".to_string(), "truth".into(), "predicted".into()];
    if with_probs {
        header.extend(set.class_names.iter().map(|c| format!("p_{c}")));
    }
    let mut w = csv::Writer::from_writer(out.into_bytes());
    w.write_record(&header)?;
    for r in &set.rows {
        let mut rec = vec![r.case_id.clone(), set.class_names[r.truth].clone(), set.class_names[r.predicted].clone()];
        if with_probs {
            rec.extend(r.probabilities.iter().flatten().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, bytes).map_err(Error::io(path))
}

/// Reads a prediction CSV. Class order comes from `# classes:`, else from
/// the `p_` columns, else from `fallback`.
pub fn read_predictions(path: &Path, fallback: Option<&[String]>) -> Result<PredictionFile> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let bad = |m: String| Error::data(format!("{}: {m}", path.display()));
    let mut meta = BTreeMap::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line[1..].split_once(':') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(["case_id", "truth", "predicted"]) {
        return Err(bad("header must start with case_id,truth,predicted".into()));
    }
    let prob_classes: Vec<String> = header
        .iter()
        .skip(3)
        .map(|h| h.strip_prefix("p_").map(str::to_string).ok_or_else(|| bad(format!("unexpected column `{h}`"))))
        .collect::<Result<_>>()?;
    let classes: Vec<String> = match meta.remove("classes") {
        Some(c) => c.split(',').map(|s| s.trim().to_string()).collect(),
        None if !prob_classes.is_empty() => prob_classes.clone(),
        None => fallback.map(<[String]>::to_vec).ok_or_else(|| bad("no class list; pass --classes".into()))?,
    };
    if !prob_classes.is_empty() && prob_classes != classes {
        return Err(bad("probability columns disagree with the class list".into()));
    }
    let index = |name: &str, line: u64| -> Result<usize> {
        classes.iter().position(|c| c == name).ok_or_else(|| bad(format!("line {line}: unknown class `{name}`")))
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let probabilities = if prob_classes.is_empty() {
            None
        } else {
            Some(
                record
                    .iter()
                    .skip(3)
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("line {line}: `{v}` is not a probability"))))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        rows.push(PredictionRow {
            case_id: record[0].to_string(),
            truth: index(&record[1], line)?,
            predicted: index(&record[2], line)?,
            probabilities,
        });
    }
    let set = PredictionSet::new(classes, rows).map_err(|e| bad(e.to_string()))?;
    Ok(PredictionFile { set, meta })
}
