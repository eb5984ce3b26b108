//! Run configuration and the staged `run` pipeline.
//!
//! Stage outputs live in one run directory. A stage reads only files that
//! earlier stages wrote there, so `--from <stage>` resumes from disk and
//! reproduces the uninterrupted run byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use morphoml_core::aggregate::{default_ct_radii, FeatureRegistry, DEFAULT_CONFIGURATION};
use morphoml_core::cohort::{stratified_split, validate_fractions, Cohort, LabelScheme, Split, StainRegistry};
use morphoml_core::evaluation::{evaluate, PredictionSet};
use morphoml_core::gbdt::GbdtParams;
use morphoml_core::preprocess::{grid_side, StainMatrix, DEFAULT_GRID_N};
use morphoml_core::rng::derive_seed;
use morphoml_core::Executor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::manifest::{check_split_covers, load_manifest, load_split, write_split};
use crate::io::model::ModelFile;
use crate::io::predictions::{read_predictions, write_predictions};
use crate::io::reports::{read_json, write_confusion_csv, write_json};
use crate::io::store::FeatureStore;
use crate::ops::{self, FeatureSettings};
use crate::TOOL_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub images: PathBuf,
    pub masks: PathBuf,
    pub output: PathBuf,
    pub feature_config: String,
    pub ct_radii: Vec<f64>,
    /// Stains appended to the feature vector as categorical columns.
    pub ihc_panel: Vec<String>,
    /// Stain registry override; empty means the built-in registry.
    pub stains: Vec<String>,
    pub label_scheme: String,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    /// Top-level seed; the split, fold and bootstrap seeds derive from it.
    pub seed: u64,
    pub grid_n: usize,
    pub expansion_px: u32,
    pub gbdt: GbdtParams,
    pub folds: usize,
    pub bootstrap: usize,
    /// Never part of the config digest: it cannot change any output.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            images: PathBuf::new(),
            masks: PathBuf::new(),
            output: PathBuf::new(),
            feature_config: DEFAULT_CONFIGURATION.into(),
            ct_radii: default_ct_radii(),
            ihc_panel: Vec::new(),
            stains: Vec::new(),
            label_scheme: "eight-way".into(),
            fractions: [0.6, 0.2, 0.2],
            seed: 0,
            grid_n: DEFAULT_GRID_N,
            expansion_px: 10,
            gbdt: GbdtParams::default(),
            folds: 5,
            bootstrap: 1000,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).map_err(|e| match e {
            Error::Data(m) => Error::Validation(m),
            other => other,
        })
    }

    pub fn scheme(&self) -> Result<LabelScheme> {
        self.label_scheme.parse().map_err(|_| Error::validation(format!("unknown label scheme `{}`", self.label_scheme)))
    }

    pub fn stain_registry(&self) -> StainRegistry {
        if self.stains.is_empty() {
            StainRegistry::default()
        } else {
            StainRegistry::new(self.stains.iter().cloned())
        }
    }

    pub fn registry(&self) -> Result<FeatureRegistry> {
        FeatureRegistry::build(&self.feature_config, self.ct_radii.clone(), &self.ihc_panel, &self.stain_registry())
            .map_err(|e| Error::validation(e.to_string()))
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn bootstrap_seed(&self) -> u64 {
        derive_seed(self.seed, "evaluate")
    }

    /// Boosting parameters with the fold seed derived from the run seed.
    pub fn resolved_gbdt(&self) -> GbdtParams {
        GbdtParams { seed: derive_seed(self.seed, "train"), ..self.gbdt.clone() }
    }

    pub fn feature_settings(&self) -> FeatureSettings {
        FeatureSettings { grid_n: self.grid_n, expansion_px: self.expansion_px, stain_matrix: StainMatrix::default() }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        for (what, p, dir) in [("manifest", &self.manifest, false), ("images", &self.images, true), ("masks", &self.masks, true)] {
            let ok = if dir { p.is_dir() } else { p.is_file() };
            if !ok {
                return Err(Error::validation(format!("{what} path `{}` does not exist", p.display())));
            }
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::validation("output directory is not set"));
        }
        self.registry()?;
        let scheme = self.scheme()?;
        validate_fractions(self.fractions).map_err(|e| Error::validation(e.to_string()))?;
        if self.fractions[2] == 0.0 {
            return Err(Error::validation("the test fraction must be positive"));
        }
        grid_side(self.grid_n).map_err(|e| Error::validation(e.to_string()))?;
        self.gbdt.validate(scheme.num_classes()).map_err(|e| Error::validation(e.to_string()))?;
        if self.folds == 1 {
            return Err(Error::validation("folds must be 0 (no cross-validation) or at least 2"));
        }
        if self.bootstrap == 0 {
            return Err(Error::validation("bootstrap replicates must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON, without the output directory and
    /// thread count, which cannot change any result.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { output: PathBuf::new(), threads: None, ..self.clone() };
        hex::encode(Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Split,
    Preprocess,
    Features,
    Train,
    Predict,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Split, Stage::Preprocess, Stage::Features, Stage::Train, Stage::Predict, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::Preprocess => "preprocess",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::validation(format!("unknown stage `{s}`")))
    }
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const SPLIT: &str = "split.csv";
    pub const PATCHES: &str = "patches.csv";
    pub const FEATURES: &str = "features.csv";
    pub const MODEL: &str = "model.json";
    pub const CV_PREDICTIONS: &str = "cv_predictions.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const METRICS: &str = "metrics.json";
    pub const CV_METRICS: &str = "cv_metrics.json";
    pub const CONFUSION: &str = "confusion.csv";
    pub const PROVENANCE: &str = "provenance.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub registry_hash: String,
    pub resumed_from: Option<Stage>,
    pub stages: Vec<StageTiming>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub unpredicted_cases: Vec<String>,
}

/// Provenance comment lines for CSV outputs.
fn output_meta(digest: &str, registry_hash: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("config_digest".to_string(), digest.to_string()),
        ("registry_hash".to_string(), registry_hash.to_string()),
        ("tool_version".to_string(), TOOL_VERSION.to_string()),
    ])
}

struct Run<'a, E> {
    exec: &'a E,
    config: &'a RunConfig,
    dir: &'a Path,
    digest: String,
    registry_hash: String,
    cohort: Cohort,
    unpredicted: Vec<String>,
}

impl<E: Executor> Run<'_, E> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn meta(&self) -> BTreeMap<String, String> {
        output_meta(&self.digest, &self.registry_hash)
    }

    fn load_store(&self) -> Result<FeatureStore> {
        let store = FeatureStore::load(&self.path(files::FEATURES))?;
        if store.registry.hash() != self.registry_hash || store.config_digest != self.digest {
            return Err(Error::validation("feature store in the run directory was produced by a different configuration"));
        }
        Ok(store)
    }

    fn load_model(&self) -> Result<ModelFile> {
        let model = ModelFile::load(&self.path(files::MODEL))?;
        model.check_schema(&self.registry_hash)?;
        if model.config_digest != self.digest {
            return Err(Error::validation("model in the run directory was produced by a different configuration"));
        }
        Ok(model)
    }

    fn cases_in(&self, split: Split) -> Result<Vec<String>> {
        let s = load_split(&self.path(files::SPLIT))?;
        check_split_covers(&s, &self.cohort)?;
        Ok(self.cohort.cases().iter().filter(|c| s.get(&c.case_id) == Some(split)).map(|c| c.case_id.clone()).collect())
    }

    fn stage(&mut self, stage: Stage) -> Result<()> {
        let c = self.config;
        match stage {
            Stage::Split => {
                let split = stratified_split(&self.cohort, c.fractions, c.split_seed())?;
                write_split(&self.path(files::SPLIT), &split)
            }
            Stage::Preprocess => {
                let records = ops::preprocess_cohort(self.exec, &self.cohort, &c.images, c.grid_n, None)?;
                ops::write_patch_index(&self.path(files::PATCHES), &records)
            }
            Stage::Features => {
                let kept: BTreeSet<_> =
                    ops::read_patch_index(&self.path(files::PATCHES))?.iter().filter(|r| r.kept).map(|r| r.key()).collect();
                let (store, _) = ops::extract_features(
                    self.exec,
                    &self.cohort,
                    &c.images,
                    &c.masks,
                    &c.registry()?,
                    &c.feature_settings(),
                    &c.stain_registry(),
                    Some(&kept),
                    &self.digest,
                    false,
                )?;
                store.save(&self.path(files::FEATURES))
            }
            Stage::Train => {
                let store = self.load_store()?;
                let scheme = c.scheme()?;
                let train = self.cases_in(Split::Train)?;
                let out = ops::train_cases(self.exec, &store, &self.cohort, &train, scheme, &c.resolved_gbdt(), c.folds)?;
                let names = store.registry.names().iter().map(|s| s.to_string()).collect();
                ModelFile::new(out.model, ops::class_names(scheme), names, self.digest.clone()).save(&self.path(files::MODEL))?;
                let cv_path = self.path(files::CV_PREDICTIONS);
                match out.cv {
                    Some(cv) => write_predictions(&cv_path, &cv, &self.meta()),
                    None => remove_if_present(&cv_path),
                }
            }
            Stage::Predict => {
                let store = self.load_store()?;
                let model = self.load_model()?;
                let test = self.cases_in(Split::Test)?;
                let (preds, missing) = ops::predict_cases(self.exec, &model.model, &store, &self.cohort, &test, c.scheme()?)?;
                self.unpredicted = missing;
                write_predictions(&self.path(files::PREDICTIONS), &preds, &self.meta())
            }
            Stage::Evaluate => {
                let preds = read_predictions(&self.path(files::PREDICTIONS), None)?;
                self.check_meta(&preds.meta)?;
                let report = self.report(&preds.set)?;
                write_json(&self.path(files::METRICS), &report)?;
                write_confusion_csv(&self.path(files::CONFUSION), &report.report)?;
                let cv_path = self.path(files::CV_PREDICTIONS);
                if cv_path.is_file() {
                    let cv = read_predictions(&cv_path, None)?;
                    self.check_meta(&cv.meta)?;
                    write_json(&self.path(files::CV_METRICS), &self.report(&cv.set)?)?;
                }
                Ok(())
            }
        }
    }

    fn check_meta(&self, meta: &BTreeMap<String, String>) -> Result<()> {
        if meta.get("config_digest") != Some(&self.digest) || meta.get("registry_hash") != Some(&self.registry_hash) {
            return Err(Error::validation("predictions in the run directory were produced by a different configuration"));
        }
        Ok(())
    }

    fn report(&self, preds: &PredictionSet) -> Result<ReportFile> {
        let report = evaluate(self.exec, preds, self.config.bootstrap, self.config.bootstrap_seed())?;
        Ok(ReportFile { config_digest: self.digest.clone(), registry_hash: self.registry_hash.clone(), report })
    }
}

/// A metric report stamped with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_digest: String,
    pub registry_hash: String,
    #[serde(flatten)]
    pub report: morphoml_core::evaluation::MetricReport,
}

fn remove_if_present(path: &Path) -> Result<()> {
    match std::fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path)(e)),
        _ => Ok(()),
    }
}

/// Runs every stage from `from` (default: the first) into `config.output`.
/// On failure the provenance record names the stage and earlier outputs
/// stay in place.
pub fn run_pipeline<E: Executor>(exec: &E, config: &RunConfig, from: Option<Stage>) -> Result<Provenance> {
    config.validate()?;
    let dir = config.output.as_path();
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let digest = config.digest();
    let config_path = dir.join(files::CONFIG);
    if from.is_some_and(|s| s != Stage::Split) {
        let previous = RunConfig::load(&config_path)?;
        if previous.digest() != digest {
            return Err(Error::validation(format!("{} holds a run with a different configuration; cannot resume", dir.display())));
        }
    }
    write_json(&config_path, config)?;
    let registry_hash = config.registry()?.hash();
    let cohort = load_manifest(&config.manifest, &config.stain_registry())?;
    let mut run = Run { exec, config, dir, digest, registry_hash, cohort, unpredicted: Vec::new() };
    let mut provenance = Provenance {
        tool_version: TOOL_VERSION.into(),
        config: config.clone(),
        config_digest: run.digest.clone(),
        registry_hash: run.registry_hash.clone(),
        resumed_from: from,
        stages: Vec::new(),
        failed_stage: None,
        error: None,
        unpredicted_cases: Vec::new(),
    };
    let first = from.unwrap_or(Stage::Split);
    for stage in Stage::ALL.into_iter().filter(|&s| s >= first) {
        info!("stage {stage}");
        let t = Instant::now();
        if let Err(e) = run.stage(stage) {
            provenance.failed_stage = Some(stage);
            provenance.error = Some(e.to_string());
            write_json(&dir.join(files::PROVENANCE), &provenance)?;
            return Err(Error::Stage { stage: stage.name(), source: Box::new(e) });
        }
        provenance.stages.push(StageTiming { stage, seconds: t.elapsed().as_secs_f64() });
    }
    provenance.unpredicted_cases = std::mem::take(&mut run.unpredicted);
    write_json(&dir.join(files::PROVENANCE), &provenance)?;
    Ok(provenance)
}
