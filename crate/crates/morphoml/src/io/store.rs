//! Patch feature store: one CSV row per patch plus a JSON sidecar.

use std::path::{Path, PathBuf};

use morphoml_core::aggregate::{AggregateWarning, FeatureRegistry};
use morphoml_core::preprocess::PatchKey;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::csv_file_err;
use crate::TOOL_VERSION;

pub const STORE_FORMAT: &str = "morphoml-features";
pub const STORE_VERSION: u32 = 1;
const KEY_COLUMNS: [&str; 4] = ["case_id", "core_id", "row", "col"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowWarning {
    pub row: usize,
    pub warning: AggregateWarning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSidecar {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub config: String,
    pub registry_hash: String,
    pub config_digest: String,
    pub rows: usize,
    pub registry: FeatureRegistry,
    pub warnings: Vec<RowWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub registry: FeatureRegistry,
    pub config_digest: String,
    pub keys: Vec<PatchKey>,
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<RowWarning>,
}

/// `features.csv` pairs with `features.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

impl FeatureStore {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn registry_hash(&self) -> String {
        self.registry.hash()
    }

    /// Row indices of every patch of `case_id`, in store order.
    pub fn rows_of_case(&self, case_id: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.keys[i].case_id == case_id).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_file_err(path))?;
        w.write_record(KEY_COLUMNS.iter().copied().chain(self.registry.names()))?;
        let mut record = Vec::with_capacity(self.registry.len() + 4);
        for (key, values) in self.keys.iter().zip(&self.values) {
            record.clear();
            record.extend([key.case_id.clone(), key.core_id.clone(), key.row.to_string(), key.col.to_string()]);
            record.extend(values.iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush().map_err(Error::io(path))?;
        let sidecar = StoreSidecar {
            format: STORE_FORMAT.into(),
            format_version: STORE_VERSION,
            tool_version: TOOL_VERSION.into(),
            config: self.registry.config.clone(),
            registry_hash: self.registry.hash(),
            config_digest: self.config_digest.clone(),
            rows: self.len(),
            registry: self.registry.clone(),
            warnings: self.warnings.clone(),
        };
        crate::io::reports::write_json(&sidecar_path(path), &sidecar)
    }

    /// Loads and cross-checks CSV and sidecar: format, registry hash, header
    /// and row count must all agree.
    pub fn load(path: &Path) -> Result<Self> {
        let side_path = sidecar_path(path);
        let text = std::fs::read_to_string(&side_path).map_err(Error::io(&side_path))?;
        let sidecar: StoreSidecar = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", side_path.display())))?;
        let bad = |m: String| Error::data(format!("{}: {m}", path.display()));
        if sidecar.format != STORE_FORMAT || sidecar.format_version != STORE_VERSION {
            return Err(bad(format!("unsupported store format {} v{}", sidecar.format, sidecar.format_version)));
        }
        if sidecar.registry.hash() != sidecar.registry_hash {
            return Err(bad("sidecar registry does not match its recorded hash".into()));
        }
        let mut reader = csv::Reader::from_path(path).map_err(csv_file_err(path))?;
        let header = reader.headers().map_err(csv_file_err(path))?.clone();
        if header.iter().ne(KEY_COLUMNS.iter().copied().chain(sidecar.registry.names())) {
            return Err(bad("CSV header disagrees with the sidecar registry".into()));
        }
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_file_err(path))?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64> {
                record[i].parse().map_err(|_| bad(format!("line {line}: `{}` is not a number", &record[i])))
            };
            let idx = |i: usize| -> Result<usize> {
                record[i].parse().map_err(|_| bad(format!("line {line}: `{}` is not a patch index", &record[i])))
            };
            keys.push(PatchKey { case_id: record[0].into(), core_id: record[1].into(), row: idx(2)?, col: idx(3)? });
            values.push((4..record.len()).map(num).collect::<Result<Vec<_>>>()?);
        }
        if keys.len() != sidecar.rows {
            return Err(bad(format!("{} rows but the sidecar records {}", keys.len(), sidecar.rows)));
        }
        Ok(Self {
            registry: sidecar.registry,
            config_digest: sidecar.config_digest,
            keys,
            values,
            warnings: sidecar.warnings,
        })
    }
}
