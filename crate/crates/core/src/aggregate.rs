//! Patch-level feature vectors: object aggregation, Ripley self-K, feature
//! set configurations and IHC encoding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{IhcScore, StainRegistry};
use crate::objectfeatures::{
    arch_features, derive_secondary_objects, shape_features_of, IntensityFeatures, LabelMask, ObjectPixels,
    ShapeFeatures, ARCH_NAMES, INTENSITY_NAMES, SHAPE_FEATURE_COUNT,
};
use crate::preprocess::{deconvolve_stains, gray, PatchKey, PreprocessError, StainChannels, StainMatrix};
#[allow(unused_imports)]
use crate::prelude::*;
use crate::raster::{Channel, RgbImage};
use crate::stats;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AggregateError {
    #[error("unknown feature configuration `{0}`")]
    UnknownConfig(String),
    #[error("configuration needs the {0:?} block but the patch data lacks it")]
    MissingBlock(Block),
    #[error("stain `{0}` is not registered")]
    UnknownStain(String),
    #[error("radii must be positive and strictly increasing")]
    BadRadii,
    #[error("assembled {got} values but the registry declares {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AggregateWarning {
    /// No objects: every aggregate column was set to 0.
    EmptyPatch,
    /// Fewer than two centroids: the self-K vector was set to 0.
    TooFewCentroids(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aggregator {
    Mean,
    Std,
    Skew,
    Kurtosis,
    Iqr,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [Self::Mean, Self::Std, Self::Skew, Self::Kurtosis, Self::Iqr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Std => "std",
            Self::Skew => "skew",
            Self::Kurtosis => "kurtosis",
            Self::Iqr => "iqr",
        }
    }

    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Self::Mean => stats::mean(values),
            Self::Std => stats::std_dev(values),
            Self::Skew => stats::skewness(values),
            Self::Kurtosis => stats::kurtosis(values),
            Self::Iqr => stats::iqr(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StainChannel {
    Hematoxylin,
    Eosin,
    Gray,
    Residual,
}

impl StainChannel {
    pub fn name(self) -> &'static str {
        match self {
            Self::Hematoxylin => "Hematoxylin",
            Self::Eosin => "Eosin",
            Self::Gray => "Gray",
            Self::Residual => "Residual",
        }
    }
}

/// Column groups a configuration is built from. Per-object blocks are
/// aggregated with all five [`Aggregator`]s; `Ct` and `Ihc` are patch-level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    /// 62 nuclear shape scalars.
    NuclearShape,
    /// Nuclear intensity on hematoxylin, eosin and gray: 45 scalars.
    NuclearIntensity,
    /// Cytoplasm shape (62), cytoplasm H/E intensity (30) and two ratios.
    Cytoplasmic,
    /// The remaining object × channel intensity sets: nucleus residual,
    /// cell on all four channels, cytoplasm gray and residual (105).
    Intensity,
    /// 13 positional scalars per nucleus.
    CpArch,
    /// Self-K values at the configured radii.
    Ct,
    /// One ordinal column per selected stain.
    Ihc,
}

const NUCLEAR_INTENSITY_CHANNELS: [StainChannel; 3] =
    [StainChannel::Hematoxylin, StainChannel::Eosin, StainChannel::Gray];
const CYTOPLASM_INTENSITY_CHANNELS: [StainChannel; 2] = [StainChannel::Hematoxylin, StainChannel::Eosin];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ObjectRole {
    Nucleus,
    Cell,
    Cytoplasm,
}

impl ObjectRole {
    fn prefix(self) -> &'static str {
        match self {
            Self::Nucleus => "Nuclei",
            Self::Cell => "Cells",
            Self::Cytoplasm => "Cytoplasm",
        }
    }
}

const EXTRA_INTENSITY_SETS: [(ObjectRole, StainChannel); 7] = [
    (ObjectRole::Nucleus, StainChannel::Residual),
    (ObjectRole::Cell, StainChannel::Hematoxylin),
    (ObjectRole::Cell, StainChannel::Eosin),
    (ObjectRole::Cell, StainChannel::Gray),
    (ObjectRole::Cell, StainChannel::Residual),
    (ObjectRole::Cytoplasm, StainChannel::Gray),
    (ObjectRole::Cytoplasm, StainChannel::Residual),
];

fn intensity_names(role: ObjectRole, channel: StainChannel) -> impl Iterator<Item = String> {
    INTENSITY_NAMES.iter().map(move |s| format!("{}_Intensity_{s}_{}", role.prefix(), channel.name()))
}

impl Block {
    pub fn is_per_object(self) -> bool {
        !matches!(self, Block::Ct | Block::Ihc)
    }

    /// Per-object base feature names (empty for patch-level blocks).
    pub fn base_names(self) -> Vec<String> {
        match self {
            Block::NuclearShape => ShapeFeatures::names().into_iter().map(|n| format!("Nuclei_AreaShape_{n}")).collect(),
            Block::NuclearIntensity => NUCLEAR_INTENSITY_CHANNELS
                .iter()
                .flat_map(|&c| intensity_names(ObjectRole::Nucleus, c))
                .collect(),
            Block::Cytoplasmic => {
                let mut v: Vec<String> =
                    ShapeFeatures::names().into_iter().map(|n| format!("Cytoplasm_AreaShape_{n}")).collect();
                v.extend(CYTOPLASM_INTENSITY_CHANNELS.iter().flat_map(|&c| intensity_names(ObjectRole::Cytoplasm, c)));
                v.push("Cytoplasm_Ratio_NucleusCellArea".into());
                v.push("Cytoplasm_Ratio_MeanIntensityHematoxylin".into());
                v
            }
            Block::Intensity => EXTRA_INTENSITY_SETS.iter().flat_map(|&(r, c)| intensity_names(r, c)).collect(),
            Block::CpArch => ARCH_NAMES.iter().map(|s| format!("Location_{s}")).collect(),
            Block::Ct | Block::Ihc => Vec::new(),
        }
    }
}

/// Named feature-set configurations, in the order they are listed by tools.
pub const CONFIGURATIONS: [(&str, &[Block]); 11] = [
    ("NuclearMorphological", &[Block::NuclearShape]),
    ("NuclearIntensity", &[Block::NuclearIntensity]),
    ("Cytoplasmic", &[Block::Cytoplasmic]),
    ("NuclearMorphologicalIntensity", &[Block::NuclearShape, Block::NuclearIntensity]),
    ("NuclearCytoplasmic", &[Block::NuclearShape, Block::NuclearIntensity, Block::Cytoplasmic]),
    ("CPArchCT", &[Block::CpArch, Block::Ct]),
    ("NuclearCPArch", &[Block::NuclearShape, Block::NuclearIntensity, Block::CpArch]),
    ("NuclearCPArchCT", &[Block::NuclearShape, Block::NuclearIntensity, Block::CpArch, Block::Ct]),
    (
        "NuclearCytoplasmIntensity",
        &[Block::NuclearShape, Block::NuclearIntensity, Block::Cytoplasmic, Block::Intensity],
    ),
    (
        "NuclearCytoplasmIntensityCPArch",
        &[Block::NuclearShape, Block::NuclearIntensity, Block::Cytoplasmic, Block::Intensity, Block::CpArch],
    ),
    (
        "NuclearCPArchCytoplasmIntensityCT",
        &[Block::NuclearShape, Block::NuclearIntensity, Block::Cytoplasmic, Block::Intensity, Block::CpArch, Block::Ct],
    ),
];

/// The best H&E-only configuration.
pub const DEFAULT_CONFIGURATION: &str = "NuclearCytoplasmIntensityCPArch";

/// Ten radii from 5 to 50 px.
pub fn default_ct_radii() -> Vec<f64> {
    (1..=10).map(|i| 5.0 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub categorical: bool,
}

/// Ordered column list for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    pub config: String,
    pub blocks: Vec<Block>,
    pub ct_radii: Vec<f64>,
    pub ihc_stains: Vec<String>,
    pub columns: Vec<Column>,
}

fn numeric(name: String) -> Column {
    Column { name, categorical: false }
}

impl FeatureRegistry {
    pub fn configuration(name: &str) -> Result<Self, AggregateError> {
        Self::build(name, default_ct_radii(), &[], &StainRegistry::default())
    }

    /// Registry for `name`, optionally extended with IHC columns.
    pub fn build(
        name: &str,
        ct_radii: Vec<f64>,
        ihc_stains: &[String],
        stains: &StainRegistry,
    ) -> Result<Self, AggregateError> {
        let (_, blocks) = CONFIGURATIONS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| AggregateError::UnknownConfig(name.to_string()))?;
        let mut blocks = blocks.to_vec();
        if !ihc_stains.is_empty() {
            blocks.push(Block::Ihc);
        }
        Self::from_blocks(name, blocks, ct_radii, ihc_stains, stains)
    }

    pub fn from_blocks(
        name: &str,
        blocks: Vec<Block>,
        ct_radii: Vec<f64>,
        ihc_stains: &[String],
        stains: &StainRegistry,
    ) -> Result<Self, AggregateError> {
        if ct_radii.is_empty() || ct_radii[0] <= 0.0 || ct_radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AggregateError::BadRadii);
        }
        for s in ihc_stains {
            if !stains.contains(s) {
                return Err(AggregateError::UnknownStain(s.clone()));
            }
        }
        let mut columns = Vec::new();
        for &block in &blocks {
            match block {
                Block::Ct => columns.extend(ct_radii.iter().map(|r| numeric(format!("CT_SelfK_r{r}")))),
                Block::Ihc => columns
                    .extend(ihc_stains.iter().map(|s| Column { name: format!("IHC_{s}"), categorical: true })),
                b => {
                    for base in b.base_names() {
                        columns.extend(Aggregator::ALL.iter().map(|a| numeric(format!("{base}_{}", a.name()))));
                    }
                }
            }
        }
        Ok(Self { config: name.to_string(), blocks, ct_radii, ihc_stains: ihc_stains.to_vec(), columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn categorical_mask(&self) -> Vec<bool> {
        self.columns.iter().map(|c| c.categorical).collect()
    }

    /// Hex SHA-256 of the column list; changes exactly when the columns do.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.columns {
            h.update(c.name.as_bytes());
            h.update(if c.categorical { b"\tcat\n" } else { b"\tnum\n" });
        }
        hex::encode(h.finalize())
    }

    /// Registry restricted to `indices` (kept in the given order).
    pub fn subset(&self, indices: &[usize], name: &str) -> Self {
        Self {
            config: name.to_string(),
            blocks: self.blocks.clone(),
            ct_radii: self.ct_radii.clone(),
            ihc_stains: self.ihc_stains.clone(),
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
        }
    }
}

/// Five aggregates per base feature, base-major. `rows[i]` holds one
/// object's base features. An empty slice yields `None`.
pub fn aggregate_rows(rows: &[Vec<f64>], width: usize) -> Option<Vec<f64>> {
    if rows.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(width * Aggregator::ALL.len());
    let mut column = Vec::with_capacity(rows.len());
    for f in 0..width {
        column.clear();
        column.extend(rows.iter().map(|r| r[f]));
        out.extend(Aggregator::ALL.iter().map(|a| a.apply(&column)));
    }
    Some(out)
}

/// Aggregates per-object rows of one patch; an empty patch gives zeros and
/// an [`AggregateWarning::EmptyPatch`].
pub fn aggregate_patch(rows: &[Vec<f64>], width: usize) -> (Vec<f64>, Option<AggregateWarning>) {
    match aggregate_rows(rows, width) {
        Some(v) => (v, None),
        None => (vec![0.0; width * Aggregator::ALL.len()], Some(AggregateWarning::EmptyPatch)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtFeature {
    pub radii: Vec<f64>,
    pub k_values: Vec<f64>,
}

/// Uncorrected Ripley estimator
/// `K(r) = A / (n(n−1)) · Σ_{i≠j} 1(d_ij ≤ r)`.
pub fn ripley_self_k(
    centroids: &[(f64, f64)],
    radii: &[f64],
    region_area: f64,
) -> Result<(CtFeature, Option<AggregateWarning>), AggregateError> {
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AggregateError::BadRadii);
    }
    let n = centroids.len();
    if n < 2 {
        let ct = CtFeature { radii: radii.to_vec(), k_values: vec![0.0; radii.len()] };
        return Ok((ct, Some(AggregateWarning::TooFewCentroids(n))));
    }
    let r2: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let mut counts = vec![0u64; radii.len()];
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (centroids[i].0 - centroids[j].0, centroids[i].1 - centroids[j].1);
            let d2 = dx * dx + dy * dy;
            // First radius that covers the pair; cumulated below.
            let k = r2.partition_point(|&r| r < d2);
            if k < counts.len() {
                counts[k] += 2;
            }
        }
    }
    let scale = region_area / (n as f64 * (n - 1) as f64);
    let mut running = 0u64;
    let k_values = counts
        .iter()
        .map(|&c| {
            running += c;
            scale * running as f64
        })
        .collect();
    Ok((CtFeature { radii: radii.to_vec(), k_values }, None))
}

/// One ordinal per stain: Negative 0, Positive 1, CannotInterpret 2, Missing 3.
pub fn encode_ihc(
    panel: &BTreeMap<String, IhcScore>,
    stain_list: &[String],
    stains: &StainRegistry,
) -> Result<Vec<f64>, AggregateError> {
    stain_list
        .iter()
        .map(|s| {
            if !stains.contains(s) {
                return Err(AggregateError::UnknownStain(s.clone()));
            }
            Ok(f64::from(panel.get(s).copied().unwrap_or(IhcScore::Missing).code()))
        })
        .collect()
}

/// Deconvolved and gray channels of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchChannels {
    pub stains: StainChannels,
    pub gray: Channel,
}

impl PatchChannels {
    pub fn get(&self, c: StainChannel) -> &Channel {
        match c {
            StainChannel::Hematoxylin => &self.stains.hematoxylin,
            StainChannel::Eosin => &self.stains.eosin,
            StainChannel::Residual => &self.stains.residual,
            StainChannel::Gray => &self.gray,
        }
    }
}

/// Deconvolves `rgb` and adds its luminance channel.
pub fn patch_channels(rgb: &RgbImage, stains: &StainMatrix) -> Result<PatchChannels, PreprocessError> {
    Ok(PatchChannels { stains: deconvolve_stains(rgb, stains)?, gray: rgb.map(gray) })
}

/// Per-object measurements of one patch, grouped by block, plus the
/// nuclear centroids used for the self-K function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatchData {
    pub object_ids: Vec<u32>,
    pub blocks: BTreeMap<Block, Vec<Vec<f64>>>,
    pub centroids: Vec<(f64, f64)>,
    pub region_area: f64,
}

fn intensity_vec(channel: &Channel, mask: &LabelMask, obj: Option<&ObjectPixels>) -> [f64; 15] {
    match obj {
        Some(o) => crate::objectfeatures::intensity_of(channel, &mask.labels, o).to_array(),
        None => IntensityFeatures::default().to_array(),
    }
}

/// Measures every nucleus of a patch for the requested per-object blocks.
/// Cells and cytoplasm come from [`derive_secondary_objects`]; an object
/// whose cytoplasm is empty reports zeros for the cytoplasm scalars.
pub fn measure_patch(
    nuclei: &LabelMask,
    channels: &PatchChannels,
    blocks: &[Block],
    expansion_px: u32,
) -> PatchData {
    let (w, h) = nuclei.dims();
    let nuc_objs = nuclei.objects();
    let needs_secondary = blocks.iter().any(|b| matches!(b, Block::Cytoplasmic | Block::Intensity | Block::CpArch));
    let (cells, cyto) = if needs_secondary {
        let (c, y) = derive_secondary_objects(nuclei, expansion_px);
        (Some(c), Some(y))
    } else {
        (None, None)
    };
    let cell_objs = cells.as_ref().map(|m| m.objects()).unwrap_or_default();
    let cyto_objs = cyto.as_ref().map(|m| m.objects()).unwrap_or_default();

    let centroids: Vec<(f64, f64)> = nuc_objs.values().map(ObjectPixels::centroid).collect();
    let mut data = PatchData {
        object_ids: nuc_objs.keys().copied().collect(),
        blocks: BTreeMap::new(),
        centroids: centroids.clone(),
        region_area: (w * h) as f64,
    };

    for &block in blocks.iter().filter(|b| b.is_per_object()) {
        let rows: Vec<Vec<f64>> = nuc_objs
            .values()
            .enumerate()
            .map(|(i, nuc)| {
                let cell = cell_objs.get(&nuc.id);
                let cy = cyto_objs.get(&nuc.id);
                match block {
                    Block::NuclearShape => shape_features_of(nuc).to_vec(),
                    Block::NuclearIntensity => NUCLEAR_INTENSITY_CHANNELS
                        .iter()
                        .flat_map(|&c| intensity_vec(channels.get(c), nuclei, Some(nuc)))
                        .collect(),
                    Block::Cytoplasmic => {
                        let cyto_mask = cyto.as_ref().expect("secondary objects derived");
                        let mut v = match cy {
                            Some(o) => shape_features_of(o).to_vec(),
                            None => vec![0.0; SHAPE_FEATURE_COUNT],
                        };
                        for &c in &CYTOPLASM_INTENSITY_CHANNELS {
                            v.extend(intensity_vec(channels.get(c), cyto_mask, cy));
                        }
                        let cell_area = cell.map_or(nuc.area(), |c| c.area()) as f64;
                        v.push(nuc.area() as f64 / cell_area);
                        let nuc_mean = intensity_vec(channels.get(StainChannel::Hematoxylin), nuclei, Some(nuc))[2];
                        let cyto_mean = intensity_vec(channels.get(StainChannel::Hematoxylin), cyto_mask, cy)[2];
                        v.push(if nuc_mean > 0.0 { cyto_mean / nuc_mean } else { 0.0 });
                        v
                    }
                    Block::Intensity => {
                        let cell_mask = cells.as_ref().expect("secondary objects derived");
                        let cyto_mask = cyto.as_ref().expect("secondary objects derived");
                        EXTRA_INTENSITY_SETS
                            .iter()
                            .flat_map(|&(role, c)| match role {
                                ObjectRole::Nucleus => intensity_vec(channels.get(c), nuclei, Some(nuc)),
                                ObjectRole::Cell => intensity_vec(channels.get(c), cell_mask, cell),
                                ObjectRole::Cytoplasm => intensity_vec(channels.get(c), cyto_mask, cy),
                            })
                            .collect()
                    }
                    Block::CpArch => {
                        let (x, y) = centroids[i];
                        let nn = centroids
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, &(ox, oy))| {
                                let (dx, dy) = (ox - x, oy - y);
                                dx * dx + dy * dy
                            })
                            .fold(f64::INFINITY, f64::min);
                        let nn = if nn.is_finite() { nn.sqrt() } else { 0.0 };
                        arch_features(nuc, cell, nn).values.to_vec()
                    }
                    Block::Ct | Block::Ihc => unreachable!("filtered to per-object blocks"),
                }
            })
            .collect();
        data.blocks.insert(block, rows);
    }
    data
}

/// A patch vector with its schema id and any aggregation warnings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchFeatureVector {
    pub provenance: PatchKey,
    pub schema_id: String,
    pub values: Vec<f64>,
    pub warnings: Vec<AggregateWarning>,
}

/// Concatenates the registry's blocks for one patch.
pub fn assemble_features(
    registry: &FeatureRegistry,
    provenance: PatchKey,
    data: &PatchData,
    ihc: Option<&BTreeMap<String, IhcScore>>,
    stains: &StainRegistry,
) -> Result<PatchFeatureVector, AggregateError> {
    let mut values = Vec::with_capacity(registry.len());
    let mut warnings = Vec::new();
    for &block in &registry.blocks {
        match block {
            Block::Ct => {
                let (ct, warn) = ripley_self_k(&data.centroids, &registry.ct_radii, data.region_area)?;
                values.extend(ct.k_values);
                warnings.extend(warn);
            }
            Block::Ihc => {
                let panel = ihc.ok_or(AggregateError::MissingBlock(Block::Ihc))?;
                values.extend(encode_ihc(panel, &registry.ihc_stains, stains)?);
            }
            b => {
                let rows = data.blocks.get(&b).ok_or(AggregateError::MissingBlock(b))?;
                let (agg, warn) = aggregate_patch(rows, b.base_names().len());
                values.extend(agg);
                if let Some(w) = warn {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
            }
        }
    }
    if values.len() != registry.len() {
        return Err(AggregateError::LengthMismatch { got: values.len(), expected: registry.len() });
    }
    Ok(PatchFeatureVector { provenance, schema_id: registry.hash(), values, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn len_of(name: &str) -> usize {
        FeatureRegistry::configuration(name).unwrap().len()
    }

    #[test]
    fn anchor_lengths() {
        assert_eq!(len_of("NuclearMorphological"), 310);
        assert_eq!(len_of("NuclearIntensity"), 225);
        assert_eq!(len_of("Cytoplasmic"), 470);
        assert_eq!(len_of("NuclearCytoplasmIntensity"), 1530);
        assert_eq!(len_of(DEFAULT_CONFIGURATION), 1595);
    }

    #[test]
    fn column_names_are_unique() {
        let r = FeatureRegistry::configuration("NuclearCPArchCytoplasmIntensityCT").unwrap();
        let mut names = r.names();
        names.sort_unstable();
        let before = names.len();
        names.dedup();
        assert_eq!(before, names.len());
    }

    #[test]
    fn hash_tracks_columns() {
        let a = FeatureRegistry::configuration("NuclearMorphological").unwrap();
        let b = FeatureRegistry::configuration("NuclearMorphological").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = FeatureRegistry::configuration("NuclearIntensity").unwrap();
        assert_ne!(a.hash(), c.hash());
        let d = FeatureRegistry::build("NuclearMorphological", default_ct_radii(), &["CD20".into()], &StainRegistry::default()).unwrap();
        assert_ne!(a.hash(), d.hash());
        assert_eq!(d.len(), 311);
        assert!(d.columns[310].categorical);
    }

    #[test]
    fn unknown_config_and_stain() {
        assert!(matches!(FeatureRegistry::configuration("Everything"), Err(AggregateError::UnknownConfig(_))));
        let err = FeatureRegistry::build("NuclearMorphological", default_ct_radii(), &["CD999".into()], &StainRegistry::default());
        assert_eq!(err, Err(AggregateError::UnknownStain("CD999".into())));
    }

    #[test]
    fn constant_and_two_point_aggregates() {
        let rows = vec![vec![7.0]; 5];
        assert_eq!(aggregate_patch(&rows, 1).0, [7.0, 0.0, 0.0, 0.0, 0.0]);
        let (v, _) = aggregate_patch(&[vec![1.0], vec![3.0]], 1);
        assert_eq!((v[0], v[1], v[4]), (2.0, 1.0, 1.0));
        let (v, w) = aggregate_patch(&[], 3);
        assert_eq!(v, [0.0; 15]);
        assert_eq!(w, Some(AggregateWarning::EmptyPatch));
    }

    #[test]
    fn ripley_two_points() {
        let (ct, w) = ripley_self_k(&[(10.0, 10.0), (13.0, 14.0)], &[4.0, 10.0], 10_000.0).unwrap();
        assert_eq!(ct.k_values, [0.0, 10_000.0]);
        assert!(w.is_none());
        let (ct, w) = ripley_self_k(&[(1.0, 1.0)], &[1.0], 100.0).unwrap();
        assert_eq!(ct.k_values, [0.0]);
        assert_eq!(w, Some(AggregateWarning::TooFewCentroids(1)));
        assert!(ripley_self_k(&[(0.0, 0.0), (1.0, 1.0)], &[2.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn ihc_encoding() {
        let stains = StainRegistry::default();
        let six: Vec<String> = crate::cohort::SIX_STAIN_PANEL.iter().map(|s| s.to_string()).collect();
        let all_pos: BTreeMap<String, IhcScore> = six.iter().map(|s| (s.clone(), IhcScore::Positive)).collect();
        assert_eq!(encode_ihc(&all_pos, &six, &stains).unwrap(), [1.0; 6]);
        assert!(encode_ihc(&all_pos, &[], &stains).unwrap().is_empty());
        let mut no_cd20 = all_pos.clone();
        no_cd20.remove("CD20");
        assert_eq!(encode_ihc(&no_cd20, &six, &stains).unwrap()[1], 3.0);
        assert!(encode_ihc(&all_pos, &["XYZ".into()], &stains).is_err());
    }
}
