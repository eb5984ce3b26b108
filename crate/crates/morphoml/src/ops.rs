//! Stage operations shared by the subcommands and the `run` pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::{info, warn};
use morphoml_core::aggregate::{assemble_features, measure_patch, patch_channels, FeatureRegistry};
use morphoml_core::attribution::{explain_rows, mean_abs_group_shap, mean_abs_shap, rank_features, AttributionReport, FeatureGrouping};
use morphoml_core::cohort::{group_label, CaseRecord, Cohort, LabelScheme, StainRegistry};
use morphoml_core::evaluation::{PredictionRow, PredictionSet};
use morphoml_core::gbdt::{stratified_folds, train, vote_core, GbdtModel, GbdtParams, TrainingData};
use morphoml_core::objectfeatures::{LabelMask, ObjectKind};
use morphoml_core::preprocess::{background_fraction, extract_patch_grid, CoreImage, PatchKey, StainMatrix, BACKGROUND_PATCH_FRACTION};
use morphoml_core::synth::{generate_core, SynthSpec};
use morphoml_core::Executor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::images::{find_image, read_label_mask, read_rgb, write_label_mask, write_rgb_png};
use crate::io::manifest::{csv_file_err, write_manifest};
use crate::io::reports::write_json;
use crate::io::store::{FeatureStore, RowWarning};

/// Every core of the cohort as `(case, core_id)`, in manifest order.
fn all_cores(cohort: &Cohort) -> Vec<(&CaseRecord, &str)> {
    cohort.cases().iter().flat_map(|c| c.core_ids.iter().map(move |id| (c, id.as_str()))).collect()
}

fn load_core(images: &Path, core_id: &str) -> Result<CoreImage> {
    let path = find_image(images, core_id)?;
    CoreImage::new(core_id, read_rgb(&path)?).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// One grid cell of a core and whether it survives the background filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub case_id: String,
    pub core_id: String,
    pub row: usize,
    pub col: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub background_fraction: f64,
    pub kept: bool,
}

impl PatchRecord {
    pub fn key(&self) -> PatchKey {
        PatchKey { case_id: self.case_id.clone(), core_id: self.core_id.clone(), row: self.row, col: self.col }
    }
}

/// Tiles every core and applies the background rule. With `dump`, kept
/// patches are written as `{case}_{core}_{row}_{col}.png`.
pub fn preprocess_cohort<E: Executor>(
    exec: &E,
    cohort: &Cohort,
    images: &Path,
    grid_n: usize,
    dump: Option<&Path>,
) -> Result<Vec<PatchRecord>> {
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let cores = all_cores(cohort);
    let per_core = exec.map_indexed(cores.len(), |i| -> Result<Vec<PatchRecord>> {
        let (case, core_id) = cores[i];
        let core = load_core(images, core_id)?;
        let patches = extract_patch_grid(&case.case_id, &core, grid_n).map_err(|e| Error::data(format!("core `{core_id}`: {e}")))?;
        let mut out = Vec::with_capacity(patches.len());
        for p in patches {
            let bg = background_fraction(&p.pixels);
            let kept = bg <= BACKGROUND_PATCH_FRACTION;
            if let (Some(dir), true) = (dump, kept) {
                let name = format!("{}_{}_{}_{}.png", p.key.case_id, p.key.core_id, p.key.row, p.key.col);
                write_rgb_png(&dir.join(name), &p.pixels)?;
            }
            out.push(PatchRecord {
                case_id: p.key.case_id,
                core_id: p.key.core_id,
                row: p.key.row,
                col: p.key.col,
                x: p.origin.0,
                y: p.origin.1,
                width: p.pixels.width(),
                height: p.pixels.height(),
                background_fraction: bg,
                kept,
            });
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for r in per_core {
        records.extend(r?);
    }
    let dropped = records.iter().filter(|r| !r.kept).count();
    info!("{} patches from {} cores, {dropped} dropped as background", records.len(), cores.len());
    Ok(records)
}

pub fn write_patch_index(path: &Path, records: &[PatchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_file_err(path))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_patch_index(path: &Path) -> Result<Vec<PatchRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_file_err(path))?;
    r.deserialize().map(|rec| rec.map_err(|e| Error::data(format!("{}: {e}", path.display())))).collect()
}

/// Knobs of the feature stage besides the registry itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSettings {
    pub grid_n: usize,
    pub expansion_px: u32,
    pub stain_matrix: StainMatrix,
}

/// Per-object base measurements, keyed by patch and nucleus id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectTable {
    pub columns: Vec<String>,
    pub rows: Vec<(PatchKey, u32, Vec<f64>)>,
}

impl ObjectTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_file_err(path))?;
        let key = ["case_id", "core_id", "patch_row", "patch_col", "object_id", "object_kind"];
        w.write_record(key.iter().map(|s| s.to_string()).chain(self.columns.iter().cloned()))?;
        for (k, id, values) in &self.rows {
            let mut rec = vec![k.case_id.clone(), k.core_id.clone(), k.row.to_string(), k.col.to_string(), id.to_string()];
            rec.push("nucleus".into());
            rec.extend(values.iter().map(f64::to_string));
            w.write_record(rec)?;
        }
        w.flush().map_err(Error::io(path))
    }
}

struct PatchOutput {
    key: PatchKey,
    values: Vec<f64>,
    warnings: Vec<morphoml_core::aggregate::AggregateWarning>,
    objects: Vec<(u32, Vec<f64>)>,
}

/// Measures every kept patch. `kept` restricts extraction to a patch index
/// from the preprocess stage; without it the background rule is applied
/// directly. Rows follow manifest order, then patch order.
#[allow(clippy::too_many_arguments)]
pub fn extract_features<E: Executor>(
    exec: &E,
    cohort: &Cohort,
    images: &Path,
    masks: &Path,
    registry: &FeatureRegistry,
    settings: &FeatureSettings,
    stains: &StainRegistry,
    kept: Option<&BTreeSet<PatchKey>>,
    config_digest: &str,
    with_objects: bool,
) -> Result<(FeatureStore, ObjectTable)> {
    let cores = all_cores(cohort);
    let object_blocks: Vec<_> = registry.blocks.iter().copied().filter(|b| b.is_per_object()).collect();
    let per_core = exec.map_indexed(cores.len(), |i| -> Result<Vec<PatchOutput>> {
        let (case, core_id) = cores[i];
        let core = load_core(images, core_id)?;
        let mask_path = find_image(masks, core_id)?;
        let mask = read_label_mask(&mask_path)?;
        if mask.dims() != core.pixels.dims() {
            return Err(Error::data(format!(
                "{}: mask is {:?} but the image is {:?}",
                mask_path.display(),
                mask.dims(),
                core.pixels.dims()
            )));
        }
        let patches = extract_patch_grid(&case.case_id, &core, settings.grid_n).map_err(|e| Error::data(format!("core `{core_id}`: {e}")))?;
        let mut out = Vec::new();
        for p in patches {
            let keep = match kept {
                Some(set) => set.contains(&p.key),
                None => background_fraction(&p.pixels) <= BACKGROUND_PATCH_FRACTION,
            };
            if !keep {
                continue;
            }
            let (w, h) = p.pixels.dims();
            let nuclei = LabelMask::new(mask.crop(p.origin.0, p.origin.1, w, h), ObjectKind::Nucleus);
            let channels = patch_channels(&p.pixels, &settings.stain_matrix)?;
            let data = measure_patch(&nuclei, &channels, &registry.blocks, settings.expansion_px);
            let v = assemble_features(registry, p.key.clone(), &data, Some(&case.ihc_scores), stains)?;
            let objects = if with_objects {
                (0..data.object_ids.len())
                    .map(|o| {
                        let row = object_blocks.iter().flat_map(|b| data.blocks[b][o].iter().copied()).collect();
                        (data.object_ids[o], row)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            out.push(PatchOutput { key: p.key, values: v.values, warnings: v.warnings, objects });
        }
        Ok(out)
    });
    let mut store = FeatureStore {
        registry: registry.clone(),
        config_digest: config_digest.to_string(),
        keys: Vec::new(),
        values: Vec::new(),
        warnings: Vec::new(),
    };
    let mut objects = ObjectTable {
        columns: object_blocks.iter().flat_map(|b| b.base_names()).collect(),
        rows: Vec::new(),
    };
    for core in per_core {
        for p in core? {
            let row = store.keys.len();
            store.warnings.extend(p.warnings.into_iter().map(|warning| RowWarning { row, warning }));
            objects.rows.extend(p.objects.into_iter().map(|(id, v)| (p.key.clone(), id, v)));
            store.keys.push(p.key);
            store.values.push(p.values);
        }
    }
    if !store.warnings.is_empty() {
        warn!("{} aggregation warnings recorded in the feature store sidecar", store.warnings.len());
    }
    info!("{} patch vectors of {} features", store.len(), registry.len());
    Ok((store, objects))
}

/// Projects `store` onto `target` by column name. Fails when a target
/// column is missing.
pub fn project_store(store: &FeatureStore, target: &FeatureRegistry) -> Result<FeatureStore> {
    if target.hash() == store.registry.hash() {
        return Ok(store.clone());
    }
    let index: BTreeMap<&str, usize> = store.registry.names().into_iter().enumerate().map(|(i, n)| (n, i)).collect();
    let cols = target
        .names()
        .iter()
        .map(|n| index.get(n).copied().ok_or_else(|| Error::validation(format!("feature store lacks column `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStore {
        registry: target.clone(),
        config_digest: store.config_digest.clone(),
        keys: store.keys.clone(),
        values: store.values.iter().map(|v| cols.iter().map(|&c| v[c]).collect()).collect(),
        warnings: Vec::new(),
    })
}

pub fn class_names(scheme: LabelScheme) -> Vec<String> {
    scheme.class_names().iter().map(|s| s.to_string()).collect()
}

fn case_class(cohort: &Cohort, case_id: &str, scheme: LabelScheme) -> Result<usize> {
    let case = cohort.get(case_id).ok_or_else(|| Error::data(format!("case `{case_id}` is not in the manifest")))?;
    Ok(group_label(case.diagnosis, scheme).index())
}

fn rows_by_case(store: &FeatureStore) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in store.keys.iter().enumerate() {
        map.entry(k.case_id.as_str()).or_default().push(i);
    }
    map
}

fn fit<E: Executor>(
    exec: &E,
    store: &FeatureStore,
    rows: &[usize],
    labels: &[usize],
    n_classes: usize,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| store.values[i].clone()).collect();
    let mask = store.registry.categorical_mask();
    let hash = store.registry.hash();
    let data = TrainingData { features: &x, labels, categorical: &mask, n_classes, schema_hash: &hash };
    Ok(train(exec, data, params)?)
}

pub struct TrainOutput {
    pub model: GbdtModel,
    /// Out-of-fold case predictions; `None` when fewer than two folds.
    pub cv: Option<PredictionSet>,
}

/// Trains on the patches of `cases`. With `folds ≥ 2` a case-level
/// stratified cross-validation runs first; fold assignment is seeded by
/// `params.seed`. The final model sees every listed case.
pub fn train_cases<E: Executor>(
    exec: &E,
    store: &FeatureStore,
    cohort: &Cohort,
    cases: &[String],
    scheme: LabelScheme,
    params: &GbdtParams,
    folds: usize,
) -> Result<TrainOutput> {
    let by_case = rows_by_case(store);
    let k = scheme.num_classes();
    let mut used = Vec::new();
    for c in cases {
        if by_case.contains_key(c.as_str()) {
            used.push(c.as_str());
        } else {
            warn!("case `{c}` has no feature rows and is left out of training");
        }
    }
    if used.is_empty() {
        return Err(Error::data("no training case has feature rows"));
    }
    let case_labels = used.iter().map(|c| case_class(cohort, c, scheme)).collect::<Result<Vec<_>>>()?;
    let gather = |pick: &dyn Fn(usize) -> bool| {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (ci, c) in used.iter().enumerate().filter(|(ci, _)| pick(*ci)) {
            rows.extend(&by_case[c]);
            labels.extend(std::iter::repeat_n(case_labels[ci], by_case[c].len()));
        }
        (rows, labels)
    };
    let cv = if folds >= 2 {
        let fold_of = stratified_folds(&case_labels, folds, params.seed);
        let mut out: Vec<Option<PredictionRow>> = vec![None; used.len()];
        for f in 0..folds {
            let (rows, labels) = gather(&|ci| fold_of[ci] != f);
            let held: Vec<usize> = (0..used.len()).filter(|&ci| fold_of[ci] == f).collect();
            if rows.is_empty() || held.is_empty() {
                continue;
            }
            info!("fold {}/{folds}: {} training patches, {} held-out cases", f + 1, rows.len(), held.len());
            let model = fit(exec, store, &rows, &labels, k, params)?;
            for ci in held {
                out[ci] = Some(predict_case(exec, &model, store, &by_case[used[ci]], used[ci], case_labels[ci])?);
            }
        }
        Some(PredictionSet::new(class_names(scheme), out.into_iter().flatten().collect())?)
    } else {
        None
    };
    let (rows, labels) = gather(&|_| true);
    info!("final model: {} patches from {} cases", rows.len(), used.len());
    let model = fit(exec, store, &rows, &labels, k, params)?;
    Ok(TrainOutput { model, cv })
}

fn predict_case<E: Executor>(
    exec: &E,
    model: &GbdtModel,
    store: &FeatureStore,
    rows: &[usize],
    case_id: &str,
    truth: usize,
) -> Result<PredictionRow> {
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| store.values[i].clone()).collect();
    let probs = model.predict_proba_batch(exec, &x);
    let d = vote_core(&probs)?;
    Ok(PredictionRow { case_id: case_id.to_string(), truth, predicted: d.label, probabilities: Some(d.mean_probabilities) })
}

/// Case-level predictions: patches of all the case's cores are pooled
/// and voted. Cases without feature rows are returned separately.
pub fn predict_cases<E: Executor>(
    exec: &E,
    model: &GbdtModel,
    store: &FeatureStore,
    cohort: &Cohort,
    cases: &[String],
    scheme: LabelScheme,
) -> Result<(PredictionSet, Vec<String>)> {
    if model.n_classes != scheme.num_classes() {
        return Err(Error::validation(format!(
            "model has {} classes but the label scheme has {}",
            model.n_classes,
            scheme.num_classes()
        )));
    }
    let by_case = rows_by_case(store);
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for c in cases {
        match by_case.get(c.as_str()) {
            Some(r) => rows.push(predict_case(exec, model, store, r, c, case_class(cohort, c, scheme)?)?),
            None => missing.push(c.clone()),
        }
    }
    if !missing.is_empty() {
        warn!("{} cases have no feature rows and were not predicted", missing.len());
    }
    Ok((PredictionSet::new(class_names(scheme), rows)?, missing))
}

/// Groups read from JSON: `{"groups": [{"name": .., "features": [..]}]}`.
/// Columns not listed fall into a trailing `other` group.
#[derive(Debug, Clone, Deserialize)]
struct GroupFile {
    groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct GroupEntry {
    name: String,
    features: Vec<String>,
}

pub fn load_grouping(path: &Path, names: &[&str]) -> Result<FeatureGrouping> {
    let file: GroupFile = crate::io::reports::read_json(path)?;
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut seen = BTreeSet::new();
    let mut groups = Vec::new();
    for g in file.groups {
        let mut members = Vec::new();
        for f in &g.features {
            let i = *index.get(f.as_str()).ok_or_else(|| Error::validation(format!("group `{}`: unknown feature `{f}`", g.name)))?;
            if !seen.insert(i) {
                return Err(Error::validation(format!("feature `{f}` appears in more than one group")));
            }
            members.push(i);
        }
        groups.push((g.name, members));
    }
    let rest: Vec<usize> = (0..names.len()).filter(|i| !seen.contains(i)).collect();
    if !rest.is_empty() {
        groups.push(("other".to_string(), rest));
    }
    Ok(FeatureGrouping { groups })
}

pub struct Explanation {
    /// Feature or group names, matching the columns of `table`.
    pub names: Vec<String>,
    /// `table[c][j]` = mean absolute attribution.
    pub table: Vec<Vec<f64>>,
    pub reports: Vec<AttributionReport>,
}

pub fn explain<E: Executor>(
    exec: &E,
    model: &GbdtModel,
    store: &FeatureStore,
    rows: &[usize],
    grouping: Option<&FeatureGrouping>,
) -> Result<Explanation> {
    let x: Vec<Vec<f64>> = rows.iter().map(|&i| store.values[i].clone()).collect();
    let mut reports = explain_rows(exec, model, &x)?;
    for (r, &i) in reports.iter_mut().zip(rows) {
        let k = &store.keys[i];
        r.provenance = Some(format!("{}/{}/{}/{}", k.case_id, k.core_id, k.row, k.col));
    }
    let (names, table) = match grouping {
        Some(g) => (g.groups.iter().map(|(n, _)| n.clone()).collect(), mean_abs_group_shap(&reports, g)?),
        None => (store.registry.names().iter().map(|s| s.to_string()).collect(), mean_abs_shap(&reports)),
    };
    Ok(Explanation { names, table, reports })
}

/// `class,feature,mean_abs_shap`, each class in decreasing order.
pub fn write_explanation_csv(path: &Path, exp: &Explanation, class_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_file_err(path))?;
    w.write_record(["class", "feature", "mean_abs_shap"])?;
    for (c, scores) in exp.table.iter().enumerate() {
        for j in rank_features(scores) {
            w.write_record([class_names[c].as_str(), exp.names[j].as_str(), &scores[j].to_string()])?;
        }
    }
    w.flush().map_err(Error::io(path))
}

/// Generates a synthetic cohort into `out` in the formats `run` consumes:
/// `manifest.csv`, `images/`, `masks/`, `truth/` and `spec.json`.
pub fn write_synth<E: Executor>(exec: &E, spec: &SynthSpec, out: &Path) -> Result<Cohort> {
    spec.validate()?;
    let dirs = ["images", "masks", "truth"].map(|d| out.join(d));
    for d in &dirs {
        std::fs::create_dir_all(d).map_err(Error::io(d))?;
    }
    let n = spec.classes.len() * spec.cores_per_class;
    let written = exec.map_indexed(n, |i| -> Result<morphoml_core::cohort::CaseRecord> {
        let core = generate_core(spec, i)?;
        let id = &core.record.core_ids[0];
        write_rgb_png(&dirs[0].join(format!("{id}.png")), &core.image)?;
        write_label_mask(&dirs[1].join(format!("{id}.png")), &core.mask)?;
        let path = dirs[2].join(format!("{id}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_file_err(&path))?;
        for t in &core.truth {
            w.serialize(t)?;
        }
        w.flush().map_err(Error::io(&path))?;
        Ok(core.record)
    });
    let cohort = Cohort::from_records(written.into_iter().collect::<Result<Vec<_>>>()?)?;
    let stains: BTreeSet<String> = spec.classes.iter().flat_map(|c| c.ihc.keys().cloned()).collect();
    write_manifest(&out.join("manifest.csv"), &cohort, &stains.into_iter().collect::<Vec<_>>())?;
    write_json(&out.join("spec.json"), spec)?;
    info!("wrote {} synthetic cores to {}", cohort.len(), out.display());
    Ok(cohort)
}
