//! Versioned, checksummed model documents.

use std::path::Path;

use morphoml_core::gbdt::GbdtModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TOOL_VERSION;

pub const MODEL_MAGIC: &str = "morphoml-gbdt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub magic: String,
    pub format_version: u32,
    pub tool_version: String,
    pub schema_hash: String,
    pub config_digest: String,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Hex SHA-256 over the canonical JSON of every field below except itself.
    pub checksum: String,
    pub model: GbdtModel,
}

#[derive(Serialize)]
struct Checked<'a> {
    schema_hash: &'a str,
    config_digest: &'a str,
    class_names: &'a [String],
    feature_names: &'a [String],
    model: &'a GbdtModel,
}

impl ModelFile {
    pub fn new(model: GbdtModel, class_names: Vec<String>, feature_names: Vec<String>, config_digest: String) -> Self {
        let mut file = Self {
            magic: MODEL_MAGIC.into(),
            format_version: MODEL_VERSION,
            tool_version: TOOL_VERSION.into(),
            schema_hash: model.schema_hash.clone(),
            config_digest,
            class_names,
            feature_names,
            checksum: String::new(),
            model,
        };
        file.checksum = file.compute_checksum();
        file
    }

    fn compute_checksum(&self) -> String {
        let body = Checked {
            schema_hash: &self.schema_hash,
            config_digest: &self.config_digest,
            class_names: &self.class_names,
            feature_names: &self.feature_names,
            model: &self.model,
        };
        let bytes = serde_json::to_vec(&body).expect("model serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::reports::write_json(path, self)
    }

    /// Refuses wrong magic, other format versions, checksum mismatches and
    /// structurally invalid models.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let bad = |m: String| Error::data(format!("{}: {m}", path.display()));
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| bad(format!("corrupt model file: {e}")))?;
        if file.magic != MODEL_MAGIC {
            return Err(bad(format!("not a model file (magic `{}`)", file.magic)));
        }
        if file.format_version != MODEL_VERSION {
            return Err(bad(format!("model format v{} is not supported (expected v{MODEL_VERSION})", file.format_version)));
        }
        if file.compute_checksum() != file.checksum {
            return Err(bad("checksum mismatch: the model file is corrupt".into()));
        }
        if file.schema_hash != file.model.schema_hash {
            return Err(bad("envelope and model disagree on the schema hash".into()));
        }
        file.model.validate().map_err(|e| bad(e.to_string()))?;
        if file.class_names.len() != file.model.n_classes || file.feature_names.len() != file.model.n_features {
            return Err(bad("class or feature names do not match the model shape".into()));
        }
        Ok(file)
    }

    /// Refuses feature rows produced under a different registry.
    pub fn check_schema(&self, registry_hash: &str) -> Result<()> {
        if self.schema_hash != registry_hash {
            return Err(Error::validation(format!(
                "schema hash mismatch: model expects {}, feature store has {registry_hash}",
                self.schema_hash
            )));
        }
        Ok(())
    }
}
