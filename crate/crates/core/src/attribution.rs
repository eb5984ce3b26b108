//! Exact path-dependent tree Shapley values, group sums and SHAP-ranked
//! feature selection.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::gbdt::{GbdtModel, Node, Tree};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AttributionError {
    #[error("input has {got} features, model expects {expected}")]
    SchemaMismatch { got: usize, expected: usize },
    #[error("grouping is not a partition of {n_features} features: {reason}")]
    NotPartition { n_features: usize, reason: &'static str },
    #[error("k_per_class must be at least 1")]
    ZeroK,
}

/// Per-class Shapley values of one input, in margin units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// `values[c][f]`.
    pub values: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    pub margins: Vec<f64>,
    pub provenance: Option<String>,
}

impl AttributionReport {
    /// Largest `|base_c + Σ φ_c − margin_c|` over classes.
    pub fn local_accuracy_error(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.base)
            .zip(&self.margins)
            .map(|((phi, b), m)| (b + phi.iter().sum::<f64>() - m).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement { feature, zero_fraction, one_fraction, weight: if depth == 0 { 1.0 } else { 0.0 } });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement { zero_fraction, one_fraction, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * d1 / ((i + 1) as f64 * one_fraction);
            next_one = tmp - path[i].weight * zero_fraction * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement { zero_fraction, one_fraction, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one = path[i].weight - tmp * zero_fraction * (depth - i) as f64 / d1;
        } else {
            total += path[i].weight / zero_fraction * d1 / (depth - i) as f64;
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    phi: &mut [f64],
    parent: &[PathElement],
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    let mut path = parent.to_vec();
    extend_path(&mut path, zero_fraction, one_fraction, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let el = path[i];
                if let Some(f) = el.feature {
                    phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
        }
        Node::Split { feature: f, rule, left, right, cover, .. } => {
            let (hot, cold) = if rule.goes_left(x[*f]) { (*left, *right) } else { (*right, *left) };
            let (mut in_zero, mut in_one) = (1.0, 1.0);
            // A feature already on the path is folded into this split.
            if let Some(k) = path.iter().position(|e| e.feature == Some(*f)) {
                in_zero = path[k].zero_fraction;
                in_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            let hot_frac = tree.nodes[hot].cover() / cover;
            let cold_frac = tree.nodes[cold].cover() / cover;
            recurse(tree, hot, x, phi, &path, hot_frac * in_zero, in_one, Some(*f));
            recurse(tree, cold, x, phi, &path, cold_frac * in_zero, 0.0, Some(*f));
        }
    }
}

/// Adds the Shapley values of one tree's output at `x` into `phi`.
pub fn tree_shap_single(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    recurse(tree, 0, x, phi, &[], 1.0, 1.0, None);
}

/// Cover-weighted mean leaf value.
pub fn expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        match &t.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split { left, right, cover, .. } => {
                (t.nodes[*left].cover() * go(t, *left) + t.nodes[*right].cover() * go(t, *right)) / cover
            }
        }
    }
    go(tree, 0)
}

pub fn tree_shap(model: &GbdtModel, x: &[f64]) -> Result<AttributionReport, AttributionError> {
    if x.len() != model.n_features {
        return Err(AttributionError::SchemaMismatch { got: x.len(), expected: model.n_features });
    }
    let mut values = Vec::with_capacity(model.n_classes);
    let mut base = Vec::with_capacity(model.n_classes);
    for (b, trees) in model.base_scores.iter().zip(&model.trees) {
        let mut phi = vec![0.0; model.n_features];
        let mut e = *b;
        for t in trees {
            tree_shap_single(t, x, &mut phi);
            e += expected_value(t);
        }
        values.push(phi);
        base.push(e);
    }
    Ok(AttributionReport { values, base, margins: model.margins(x), provenance: None })
}

/// Named disjoint feature groups covering the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrouping {
    pub groups: Vec<(String, Vec<usize>)>,
}

impl FeatureGrouping {
    pub fn singletons(names: &[&str]) -> Self {
        Self { groups: names.iter().enumerate().map(|(i, n)| (String::from(*n), vec![i])).collect() }
    }

    pub fn validate(&self, n_features: usize) -> Result<(), AttributionError> {
        let mut seen = vec![false; n_features];
        for (_, members) in &self.groups {
            for &f in members {
                if f >= n_features {
                    return Err(AttributionError::NotPartition { n_features, reason: "index out of range" });
                }
                if core::mem::replace(&mut seen[f], true) {
                    return Err(AttributionError::NotPartition { n_features, reason: "groups overlap" });
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(AttributionError::NotPartition { n_features, reason: "groups do not cover every feature" });
        }
        Ok(())
    }

    /// Thematic groups inferred from column names: nuclear size, nuclear
    /// shape, per-object intensity, cytoplasm shape, architecture, spatial
    /// and IHC. Anything unrecognised lands in `other`.
    pub fn thematic(names: &[&str]) -> Self {
        const ORDER: [&str; 9] = [
            "nuclear size",
            "nuclear shape",
            "nuclear intensity",
            "cytoplasm shape",
            "cytoplasm intensity",
            "cell intensity",
            "architecture",
            "spatial",
            "ihc",
        ];
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); ORDER.len() + 1];
        for (i, name) in names.iter().enumerate() {
            let slot = if is_size_feature(name) && name.starts_with("Nuclei_") {
                0
            } else if name.starts_with("Nuclei_AreaShape_") {
                1
            } else if name.starts_with("Nuclei_Intensity_") {
                2
            } else if name.starts_with("Cytoplasm_AreaShape_") || name.starts_with("Cytoplasm_Ratio_NucleusCellArea") {
                3
            } else if name.starts_with("Cytoplasm_") {
                4
            } else if name.starts_with("Cells_") {
                5
            } else if name.starts_with("Location_") {
                6
            } else if name.starts_with("CT_") {
                7
            } else if name.starts_with("IHC_") {
                8
            } else {
                9
            };
            buckets[slot].push(i);
        }
        let groups = ORDER
            .iter()
            .copied()
            .chain(core::iter::once("other"))
            .zip(buckets)
            .filter(|(_, m)| !m.is_empty())
            .map(|(n, m)| (String::from(n), m))
            .collect();
        Self { groups }
    }
}

/// Shape measurements that scale with object size (lengths and areas).
pub const SIZE_FEATURES: [&str; 12] = [
    "Area",
    "BoundingBoxArea",
    "ConvexArea",
    "Perimeter",
    "EquivalentDiameter",
    "MajorAxisLength",
    "MinorAxisLength",
    "MaxFeretDiameter",
    "MinFeretDiameter",
    "MaximumRadius",
    "MeanRadius",
    "MedianRadius",
];

/// True for aggregate columns of a size measurement of any object kind.
pub fn is_size_feature(column: &str) -> bool {
    let Some(pos) = column.find("_AreaShape_") else { return false };
    let rest = &column[pos + "_AreaShape_".len()..];
    let base = rest.rsplit_once('_').map_or(rest, |(b, _)| b);
    SIZE_FEATURES.contains(&base)
}

/// Signed group sums, `out[c][g]`.
pub fn group_attribution(
    report: &AttributionReport,
    grouping: &FeatureGrouping,
) -> Result<Vec<Vec<f64>>, AttributionError> {
    let n = report.values.first().map_or(0, Vec::len);
    grouping.validate(n)?;
    Ok(report
        .values
        .iter()
        .map(|phi| grouping.groups.iter().map(|(_, m)| m.iter().map(|&f| phi[f]).sum()).collect())
        .collect())
}

/// Attribution reports for every row, in row order.
pub fn explain_rows<E: Executor>(
    exec: &E,
    model: &GbdtModel,
    rows: &[Vec<f64>],
) -> Result<Vec<AttributionReport>, AttributionError> {
    exec.map_indexed(rows.len(), |i| tree_shap(model, &rows[i])).into_iter().collect()
}

/// `out[c][f]` = mean over reports of `|φ_{c,f}|`.
pub fn mean_abs_shap(reports: &[AttributionReport]) -> Vec<Vec<f64>> {
    let Some(first) = reports.first() else { return Vec::new() };
    let mut out: Vec<Vec<f64>> = first.values.iter().map(|v| vec![0.0; v.len()]).collect();
    for r in reports {
        for (acc, phi) in out.iter_mut().zip(&r.values) {
            for (a, p) in acc.iter_mut().zip(phi) {
                *a += p.abs();
            }
        }
    }
    let n = reports.len() as f64;
    out.iter_mut().flatten().for_each(|a| *a /= n);
    out
}

/// Per class and group: mean over reports of `|Σ_{f∈g} φ_{c,f}|`.
pub fn mean_abs_group_shap(
    reports: &[AttributionReport],
    grouping: &FeatureGrouping,
) -> Result<Vec<Vec<f64>>, AttributionError> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for r in reports {
        let g = group_attribution(r, grouping)?;
        if out.is_empty() {
            out = g.iter().map(|v| vec![0.0; v.len()]).collect();
        }
        for (acc, vals) in out.iter_mut().zip(&g) {
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v.abs();
            }
        }
    }
    let n = reports.len().max(1) as f64;
    out.iter_mut().flatten().for_each(|a| *a /= n);
    Ok(out)
}

/// Features ordered by decreasing score; ties keep the lower index first.
pub fn rank_features(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Union over classes of each class's top-`k` features by mean `|φ|`,
/// in order of first appearance (class 0's ranking first).
pub fn select_top_features<E: Executor>(
    exec: &E,
    model: &GbdtModel,
    rows: &[Vec<f64>],
    k_per_class: usize,
) -> Result<Vec<usize>, AttributionError> {
    if k_per_class == 0 {
        return Err(AttributionError::ZeroK);
    }
    let reports = explain_rows(exec, model, rows)?;
    let table = mean_abs_shap(&reports);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for scores in &table {
        for f in rank_features(scores).into_iter().take(k_per_class) {
            if seen.insert(f) {
                out.push(f);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::SplitRule;

    fn leaf(value: f64, cover: f64) -> Node {
        Node::Leaf { value, cover }
    }

    fn split(feature: usize, t: f64, left: usize, right: usize, cover: f64) -> Node {
        Node::Split { feature, rule: SplitRule::Threshold(t), left, right, cover, gain: 1.0 }
    }

    /// Path-dependent conditional expectation with features in `mask` fixed.
    fn cond_exp(tree: &Tree, i: usize, x: &[f64], mask: u32) -> f64 {
        match &tree.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split { feature, rule, left, right, cover, .. } => {
                if mask & (1 << feature) != 0 {
                    let next = if rule.goes_left(x[*feature]) { *left } else { *right };
                    cond_exp(tree, next, x, mask)
                } else {
                    (tree.nodes[*left].cover() * cond_exp(tree, *left, x, mask)
                        + tree.nodes[*right].cover() * cond_exp(tree, *right, x, mask))
                        / cover
                }
            }
        }
    }

    fn brute_force(tree: &Tree, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        (0..m)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0u32..(1 << m) {
                    if s & (1 << i) != 0 {
                        continue;
                    }
                    let size = s.count_ones() as usize;
                    let w = fact(size) * fact(m - size - 1) / fact(m);
                    phi += w * (cond_exp(tree, 0, x, s | (1 << i)) - cond_exp(tree, 0, x, s));
                }
                phi
            })
            .collect()
    }

    fn sample_tree() -> Tree {
        // Feature 0 appears twice on one path.
        Tree {
            nodes: vec![
                split(0, 0.5, 1, 2, 10.0),
                split(1, 0.5, 3, 4, 6.0),
                split(0, 1.5, 5, 6, 4.0),
                leaf(1.0, 2.0),
                split(2, 0.5, 7, 8, 4.0),
                leaf(-2.0, 1.0),
                leaf(3.0, 3.0),
                leaf(0.5, 3.0),
                leaf(-1.0, 1.0),
            ],
        }
    }

    #[test]
    fn matches_enumeration() {
        let tree = sample_tree();
        for x in [[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]] {
            let mut phi = vec![0.0; 3];
            tree_shap_single(&tree, &x, &mut phi);
            let oracle = brute_force(&tree, &x);
            for (a, b) in phi.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{phi:?} vs {oracle:?}");
            }
            let total: f64 = phi.iter().sum();
            assert!((expected_value(&tree) + total - tree.predict(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_leaf_has_zero_attribution() {
        let tree = Tree { nodes: vec![leaf(4.0, 7.0)] };
        let mut phi = vec![0.0; 2];
        tree_shap_single(&tree, &[1.0, 2.0], &mut phi);
        assert_eq!(phi, [0.0, 0.0]);
        assert_eq!(expected_value(&tree), 4.0);
    }

    #[test]
    fn grouping_checks() {
        let g = FeatureGrouping { groups: vec![("a".into(), vec![0, 2]), ("b".into(), vec![1])] };
        assert!(g.validate(3).is_ok());
        assert!(g.validate(4).is_err());
        let overlap = FeatureGrouping { groups: vec![("a".into(), vec![0, 1]), ("b".into(), vec![1])] };
        assert!(overlap.validate(2).is_err());
        let report =
            AttributionReport { values: vec![vec![1.0, -2.0, 0.5]], base: vec![0.0], margins: vec![-0.5], provenance: None };
        assert_eq!(group_attribution(&report, &g).unwrap(), [[1.5, -2.0]]);
    }

    #[test]
    fn size_family_names() {
        assert!(is_size_feature("Nuclei_AreaShape_MinorAxisLength_mean"));
        assert!(is_size_feature("Cells_AreaShape_Area_iqr"));
        assert!(!is_size_feature("Nuclei_AreaShape_Eccentricity_mean"));
        assert!(!is_size_feature("Nuclei_Intensity_MeanIntensity_Hematoxylin_mean"));
    }

    #[test]
    fn thematic_groups_partition_default_registry() {
        let reg = crate::aggregate::FeatureRegistry::configuration("NuclearCPArchCytoplasmIntensityCT").unwrap();
        let names = reg.names();
        let g = FeatureGrouping::thematic(&names);
        g.validate(names.len()).unwrap();
        assert!(g.groups.iter().all(|(n, _)| n != "other"));
        assert_eq!(g.groups[0].0, "nuclear size");
        assert_eq!(g.groups[0].1.len(), SIZE_FEATURES.len() * 5);
    }

    #[test]
    fn ranking_ties_prefer_lower_index() {
        assert_eq!(rank_features(&[1.0, 3.0, 3.0, 0.0]), [1, 2, 0, 3]);
    }
}
