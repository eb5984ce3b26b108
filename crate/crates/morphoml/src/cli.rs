//! Command-line surface. Every command maps its failure onto the exit
//! codes of [`Error::exit_code`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use morphoml_core::aggregate::{default_ct_radii, FeatureRegistry, DEFAULT_CONFIGURATION};
use morphoml_core::attribution::FeatureGrouping;
use morphoml_core::cohort::{stratified_split, validate_fractions, Cohort, LabelScheme, Split, StainRegistry};
use morphoml_core::evaluation::{evaluate, paired_test_and_tost};
use morphoml_core::gbdt::GbdtParams;
use morphoml_core::preprocess::{StainMatrix, DEFAULT_GRID_N};
use morphoml_core::synth::SynthSpec;

use crate::error::{Error, Result};
use crate::exec::{resolve_threads, RayonExecutor};
use crate::io::manifest::{check_split_covers, load_manifest, load_split, write_split};
use crate::io::model::ModelFile;
use crate::io::predictions::{read_predictions, write_predictions};
use crate::io::reports::{read_json, write_comparison_csv, write_confusion_csv, write_json};
use crate::io::store::FeatureStore;
use crate::ops::{self, FeatureSettings};
use crate::pipeline::{run_pipeline, RunConfig, Stage};

#[derive(Debug, Parser)]
#[command(name = "morphoml", version, about = "Morphometric lymphoma subtyping from H&E tissue microarray cores")]
pub struct Cli {
    /// Worker threads; defaults to MORPHOML_THREADS, then to all cores.
    #[arg(long, global = true, env = "MORPHOML_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/validation/test split of a manifest.
    Split(SplitArgs),
    /// Tile cores into patches and mark background patches.
    Preprocess(PreprocessArgs),
    /// Measure nuclei and aggregate patch feature vectors.
    Features(FeaturesArgs),
    /// Train a focal-loss boosted tree model, with cross-validation.
    Train(TrainArgs),
    /// Case-level predictions from a model and a feature store.
    Predict(PredictArgs),
    /// Tree-Shapley attributions for feature-store rows.
    Explain(ExplainArgs),
    /// Metrics with bootstrap intervals for prediction files.
    Evaluate(EvaluateArgs),
    /// Paired bootstrap test and equivalence test of two prediction files.
    Compare(CompareArgs),
    /// Write a synthetic ellipse cohort.
    Synth(SynthArgs),
    /// Run every stage into one run directory.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scheme {
    EightWay,
    FiveWay,
    DlbclBinary,
}

impl From<Scheme> for LabelScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::EightWay => LabelScheme::EightWay,
            Scheme::FiveWay => LabelScheme::FiveWay,
            Scheme::DlbclBinary => LabelScheme::DlbclBinary,
        }
    }
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test fractions, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.6, 0.2, 0.2])]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stain registry override, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub stains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    /// Patch index CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Patches per core; a perfect square.
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Also write every kept patch as a PNG into this directory.
    #[arg(long)]
    pub dump_patches: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub stains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    /// Feature store CSV; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_CONFIGURATION)]
    pub config: String,
    /// Self-K radii in pixels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    /// Stains added as categorical columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ihc: Vec<String>,
    /// Patch index from `preprocess`; without it the background rule is applied here.
    #[arg(long)]
    pub patches: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Nucleus-to-cell expansion in pixels.
    #[arg(long, default_value_t = 10)]
    pub expansion: u32,
    /// Also write per-object measurements to this CSV.
    #[arg(long)]
    pub objects: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub stains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; training uses its `train` cases. Without it every case is used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Out-of-fold predictions CSV.
    #[arg(long)]
    pub cv_out: Option<PathBuf>,
    /// Train on this configuration's columns of the store.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, value_enum, default_value_t = Scheme::EightWay)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 15)]
    pub leaves: usize,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validation folds; 0 skips cross-validation.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    #[arg(long, value_delimiter = ',')]
    pub stains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; with `--subset`, predicts only that split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub subset: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub stains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// `class,feature,mean_abs_shap` CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sample attributions as JSON.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// JSON partition of features into named groups, or `thematic`.
    #[arg(long)]
    pub groups: Option<String>,
    /// Restrict to the patches of these cases, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cases: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction CSVs; each gets its own report.
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Output directory for `<stem>_metrics.json` and `<stem>_confusion.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Class order for files that carry neither a class list nor probabilities.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Reference predictions.
    #[arg(long)]
    pub a: PathBuf,
    /// Predictions compared against the reference.
    #[arg(long)]
    pub b: PathBuf,
    /// Equivalence margin on the accuracy difference.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "a vs b")]
    pub name: String,
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Two classes that differ in nuclear size.
    Size,
    /// Two morphologically identical classes separated by one stain.
    Stain,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON cohort specification; overrides `--preset`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Size)]
    pub preset: Preset,
    #[arg(long, default_value = "CD20")]
    pub stain: String,
    #[arg(long, default_value_t = 40)]
    pub cores_per_class: usize,
    #[arg(long, default_value_t = 4)]
    pub patches: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub feature_config: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub ihc: Option<Vec<String>>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Resume from this stage using the run directory's earlier outputs.
    #[arg(long)]
    pub from: Option<Stage>,
}

fn stain_registry(names: &[String]) -> StainRegistry {
    if names.is_empty() {
        StainRegistry::default()
    } else {
        StainRegistry::new(names.iter().cloned())
    }
}

fn executor(threads: Option<usize>) -> Result<RayonExecutor> {
    let n = resolve_threads(threads)?;
    info!("{n} worker threads");
    RayonExecutor::new(n)
}

fn cases_of(cohort: &Cohort, split: Option<&PathBuf>, subset: Split) -> Result<Vec<String>> {
    match split {
        None => Ok(cohort.cases().iter().map(|c| c.case_id.clone()).collect()),
        Some(p) => {
            let s = load_split(p)?;
            check_split_covers(&s, cohort)?;
            Ok(cohort.cases().iter().filter(|c| s.get(&c.case_id) == Some(subset)).map(|c| c.case_id.clone()).collect())
        }
    }
}

fn store_meta(store: &FeatureStore) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("config_digest".to_string(), store.config_digest.clone()),
        ("registry_hash".to_string(), store.registry.hash()),
        ("tool_version".to_string(), crate::TOOL_VERSION.to_string()),
    ])
}

/// Digest of a subcommand's own arguments, stamped on what it writes.
fn args_digest(args: &impl std::fmt::Debug) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(format!("{args:?}").as_bytes()))
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Split(a) => {
            let [tr, va, te] = a.fractions[..] else {
                return Err(Error::validation(format!("--fractions needs 3 values, got {}", a.fractions.len())));
            };
            let fractions = [tr, va, te];
            validate_fractions(fractions).map_err(|e| Error::validation(e.to_string()))?;
            let cohort = load_manifest(&a.manifest, &stain_registry(&a.stains))?;
            let split = stratified_split(&cohort, fractions, a.seed).map_err(|e| Error::validation(e.to_string()))?;
            write_split(&a.out, &split)
        }
        Command::Preprocess(a) => {
            let exec = executor(threads)?;
            let cohort = load_manifest(&a.manifest, &stain_registry(&a.stains))?;
            let records = ops::preprocess_cohort(&exec, &cohort, &a.images, a.grid_n, a.dump_patches.as_deref())?;
            ops::write_patch_index(&a.out, &records)
        }
        Command::Features(a) => {
            let exec = executor(threads)?;
            let stains = stain_registry(&a.stains);
            let cohort = load_manifest(&a.manifest, &stains)?;
            let radii = if a.radii.is_empty() { default_ct_radii() } else { a.radii.clone() };
            let registry =
                FeatureRegistry::build(&a.config, radii, &a.ihc, &stains).map_err(|e| Error::validation(e.to_string()))?;
            let kept = match &a.patches {
                Some(p) => Some(ops::read_patch_index(p)?.iter().filter(|r| r.kept).map(|r| r.key()).collect::<BTreeSet<_>>()),
                None => None,
            };
            let settings = FeatureSettings { grid_n: a.grid_n, expansion_px: a.expansion, stain_matrix: StainMatrix::default() };
            let digest = args_digest(&(&a.config, &a.radii, &a.ihc, a.grid_n, a.expansion, &a.manifest));
            let (store, objects) = ops::extract_features(
                &exec,
                &cohort,
                &a.images,
                &a.masks,
                &registry,
                &settings,
                &stains,
                kept.as_ref(),
                &digest,
                a.objects.is_some(),
            )?;
            store.save(&a.out)?;
            if let Some(p) = &a.objects {
                objects.save(p)?;
            }
            Ok(())
        }
        Command::Train(a) => {
            let exec = executor(threads)?;
            let mut store = FeatureStore::load(&a.features)?;
            if let Some(name) = &a.config {
                let r = &store.registry;
                let target = FeatureRegistry::build(name, r.ct_radii.clone(), &r.ihc_stains, &stain_registry(&a.stains))
                    .map_err(|e| Error::validation(e.to_string()))?;
                store = ops::project_store(&store, &target)?;
            }
            let cohort = load_manifest(&a.manifest, &stain_registry(&a.stains))?;
            let cases = cases_of(&cohort, a.split.as_ref(), Split::Train)?;
            let params = GbdtParams {
                num_rounds: a.rounds,
                num_leaves: a.leaves,
                max_depth: a.depth,
                learning_rate: a.lr,
                gamma: a.gamma,
                min_samples_leaf: a.min_leaf,
                histogram_bins: a.bins,
                seed: a.seed,
                ..GbdtParams::default()
            };
            let scheme: LabelScheme = a.scheme.into();
            let out = ops::train_cases(&exec, &store, &cohort, &cases, scheme, &params, a.folds)?;
            let names = store.registry.names().iter().map(|s| s.to_string()).collect();
            ModelFile::new(out.model, ops::class_names(scheme), names, store.config_digest.clone()).save(&a.out)?;
            if let (Some(p), Some(cv)) = (&a.cv_out, &out.cv) {
                write_predictions(p, cv, &store_meta(&store))?;
            }
            Ok(())
        }
        Command::Predict(a) => {
            let exec = executor(threads)?;
            let model = ModelFile::load(&a.model)?;
            let store = FeatureStore::load(&a.features)?;
            model.check_schema(&store.registry.hash())?;
            let cohort = load_manifest(&a.manifest, &stain_registry(&a.stains))?;
            let subset: Split = a.subset.parse().map_err(|e: morphoml_core::cohort::CohortError| Error::validation(e.to_string()))?;
            let cases = cases_of(&cohort, a.split.as_ref(), subset)?;
            let scheme = scheme_of(&model)?;
            let (preds, _) = ops::predict_cases(&exec, &model.model, &store, &cohort, &cases, scheme)?;
            write_predictions(&a.out, &preds, &store_meta(&store))
        }
        Command::Explain(a) => {
            let exec = executor(threads)?;
            let model = ModelFile::load(&a.model)?;
            let store = FeatureStore::load(&a.features)?;
            model.check_schema(&store.registry.hash())?;
            let names = store.registry.names();
            let grouping = match a.groups.as_deref() {
                None => None,
                Some("thematic") => Some(FeatureGrouping::thematic(&names)),
                Some(p) => Some(ops::load_grouping(std::path::Path::new(p), &names)?),
            };
            let rows: Vec<usize> = if a.cases.is_empty() {
                (0..store.len()).collect()
            } else {
                (0..store.len()).filter(|&i| a.cases.contains(&store.keys[i].case_id)).collect()
            };
            if rows.is_empty() {
                return Err(Error::validation("no feature rows selected"));
            }
            let exp = ops::explain(&exec, &model.model, &store, &rows, grouping.as_ref())?;
            ops::write_explanation_csv(&a.out, &exp, &model.class_names)?;
            if let Some(p) = &a.samples {
                write_json(p, &exp.reports)?;
            }
            Ok(())
        }
        Command::Evaluate(a) => {
            let exec = executor(threads)?;
            std::fs::create_dir_all(&a.out).map_err(Error::io(&a.out))?;
            let fallback = (!a.classes.is_empty()).then_some(a.classes.as_slice());
            for p in &a.predictions {
                let file = read_predictions(p, fallback)?;
                let report = evaluate(&exec, &file.set, a.bootstrap, a.seed)?;
                let stem = p.file_stem().map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
                let doc = crate::pipeline::ReportFile {
                    config_digest: file.meta.get("config_digest").cloned().unwrap_or_default(),
                    registry_hash: file.meta.get("registry_hash").cloned().unwrap_or_default(),
                    report,
                };
                write_json(&a.out.join(format!("{stem}_metrics.json")), &doc)?;
                write_confusion_csv(&a.out.join(format!("{stem}_confusion.csv")), &doc.report)?;
            }
            Ok(())
        }
        Command::Compare(a) => {
            let exec = executor(threads)?;
            let fallback = (!a.classes.is_empty()).then_some(a.classes.as_slice());
            let pa = read_predictions(&a.a, fallback)?;
            let pb = read_predictions(&a.b, fallback)?;
            let cmp = paired_test_and_tost(&exec, &pa.set, &pb.set, a.delta, a.bootstrap, a.seed)?;
            println!(
                "{}: difference {:.4}, 95% CI [{:.4}, {:.4}], 90% CI [{:.4}, {:.4}], delta {} -> {}",
                a.name, cmp.difference, cmp.ci95.0, cmp.ci95.1, cmp.ci90.0, cmp.ci90.1, cmp.delta, cmp.conclusion
            );
            if let Some(p) = &a.out {
                write_comparison_csv(p, &[(a.name.clone(), cmp)])?;
            }
            Ok(())
        }
        Command::Synth(a) => {
            let exec = executor(threads)?;
            let mut spec = match &a.spec {
                Some(p) => read_json::<SynthSpec>(p).map_err(|e| Error::validation(e.to_string()))?,
                None => match a.preset {
                    Preset::Size => SynthSpec::size_separated(a.cores_per_class, a.patches, 0),
                    Preset::Stain => SynthSpec::stain_determined(&a.stain, a.cores_per_class, a.patches, 0),
                },
            };
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            spec.validate().map_err(|e| Error::validation(e.to_string()))?;
            ops::write_synth(&exec, &spec, &a.out).map(|_| ())
        }
        Command::Run(a) => {
            let mut config = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            macro_rules! set {
                ($($f:ident => $field:ident),*) => {$( if let Some(v) = a.$f.clone() { config.$field = v; } )*};
            }
            set!(manifest => manifest, images => images, masks => masks, output => output, seed => seed,
                 feature_config => feature_config, ihc => ihc_panel, folds => folds, bootstrap => bootstrap);
            if let Some(r) = a.rounds {
                config.gbdt.num_rounds = r;
            }
            if threads.is_some() {
                config.threads = threads;
            }
            let exec = executor(config.threads)?;
            let prov = run_pipeline(&exec, &config, a.from)?;
            info!("run complete in {:.1} s", prov.stages.iter().map(|s| s.seconds).sum::<f64>());
            Ok(())
        }
    }
}

fn scheme_of(model: &ModelFile) -> Result<LabelScheme> {
    [LabelScheme::EightWay, LabelScheme::FiveWay, LabelScheme::DlbclBinary]
        .into_iter()
        .find(|s| ops::class_names(*s) == model.class_names)
        .ok_or_else(|| Error::validation("model classes match no label scheme"))
}
