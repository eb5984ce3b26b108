//! Multiclass histogram gradient boosting with focal loss.
//!
//! Each round fits one regression tree per class to the focal-loss
//! gradients of the current softmax posterior. Trees grow best-first over
//! quantile-binned features; leaves take Newton steps `−G / (H + λ)`. The
//! whole round is then scaled by a backtracking line search, so the
//! training loss never increases from one round to the next.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::rng;

/// Probability clamp used inside logarithms and derivatives.
pub const PROB_EPS: f64 = 1e-12;
/// Lower bound on per-row hessians when fitting leaves.
const MIN_HESSIAN: f64 = 1e-6;
/// Halvings tried by the line search before training stops.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GbdtError {
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("row {row} has {got} features, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("label {label} at row {row} is outside 0..{n_classes}")]
    LabelOutOfRange { row: usize, label: usize, n_classes: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(&'static str),
    #[error("expected {expected} class weights, got {got}")]
    WeightCount { got: usize, expected: usize },
    #[error("categorical mask has {got} entries, expected {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error("no patches to vote over")]
    EmptyCore,
    #[error("model is malformed: {0}")]
    Malformed(&'static str),
}

/// Focal loss of one example and its derivatives with respect to the
/// per-class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalTerms {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

/// `L = −w_t (1 − p_t)^γ log p_t` for softmax probabilities `p` and true
/// class `t`. The hessian is the diagonal of the logit hessian and may be
/// negative for γ > 0.
pub fn focal_loss(probabilities: &[f64], label: usize, gamma: f64, weights: &[f64]) -> FocalTerms {
    let w = weights.get(label).copied().unwrap_or(1.0);
    let pt_raw = probabilities[label];
    let loss = -w * (1.0 - pt_raw).max(0.0).powf(gamma) * pt_raw.max(PROB_EPS).ln();

    let pt = pt_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = 1.0 - pt;
    let ln_pt = pt.ln();
    // A(p) = w[γ p (1−p)^(γ−1) ln p − (1−p)^γ] is dL/dz_t; its derivative in
    // p drives the diagonal hessian.
    let mut a = -q.powf(gamma);
    let mut da = 0.0;
    if gamma != 0.0 {
        let q_gm1 = q.powf(gamma - 1.0);
        a += gamma * pt * q_gm1 * ln_pt;
        da += gamma * q_gm1 * ln_pt + 2.0 * gamma * q_gm1;
        if gamma != 1.0 {
            da -= gamma * (gamma - 1.0) * pt * q.powf(gamma - 2.0) * ln_pt;
        }
    }
    a *= w;
    da *= w;

    let k = probabilities.len();
    let mut gradient = Vec::with_capacity(k);
    let mut hessian = Vec::with_capacity(k);
    for (c, &pc) in probabilities.iter().enumerate() {
        let d = if c == label { 1.0 - pc } else { -pc };
        gradient.push(a * d);
        hessian.push(da * pt * d * d - a * pc * (1.0 - pc));
    }
    FocalTerms { loss, gradient, hessian }
}

/// `w_c = n / (k · n_c)` with `k` the number of classes present. Classes
/// with no examples get weight 1.
pub fn balanced_class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>, GbdtError> {
    if labels.is_empty() {
        return Err(GbdtError::EmptyTrainingSet);
    }
    let mut counts = vec![0usize; n_classes];
    for (row, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(GbdtError::LabelOutOfRange { row, label: l, n_classes });
        }
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| if c == 0 { 1.0 } else { n / (present * c as f64) }).collect())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub num_rounds: usize,
    pub num_leaves: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Per-class weights; `None` derives balanced weights from the labels.
    pub class_weights: Option<Vec<f64>>,
    pub min_samples_leaf: usize,
    pub histogram_bins: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Seeds the fold assignment of the cross-validation driver.
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            num_rounds: 100,
            num_leaves: 15,
            max_depth: 6,
            learning_rate: 0.1,
            gamma: 2.0,
            class_weights: None,
            min_samples_leaf: 5,
            histogram_bins: 64,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self, n_classes: usize) -> Result<(), GbdtError> {
        if self.num_rounds == 0 {
            return Err(GbdtError::InvalidParams("num_rounds must be positive"));
        }
        if self.num_leaves < 2 {
            return Err(GbdtError::InvalidParams("num_leaves must be at least 2"));
        }
        if self.max_depth == 0 {
            return Err(GbdtError::InvalidParams("max_depth must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GbdtError::InvalidParams("learning_rate must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(GbdtError::InvalidParams("gamma must be non-negative"));
        }
        if self.min_samples_leaf == 0 {
            return Err(GbdtError::InvalidParams("min_samples_leaf must be positive"));
        }
        if !(2..=u16::MAX as usize).contains(&self.histogram_bins) {
            return Err(GbdtError::InvalidParams("histogram_bins must be in 2..=65535"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GbdtError::InvalidParams("lambda must be non-negative"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes {
                return Err(GbdtError::WeightCount { got: w.len(), expected: n_classes });
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(GbdtError::InvalidParams("class weights must be positive"));
            }
        }
        Ok(())
    }
}

/// How a split node routes a value: left when `x ≤ threshold`, or left when
/// the integer category is in the set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    Threshold(f64),
    Categories(Vec<i64>),
}

impl SplitRule {
    pub fn goes_left(&self, x: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => x <= *t,
            SplitRule::Categories(set) => x.fract() == 0.0 && set.binary_search(&(x as i64)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, rule: SplitRule, left: usize, right: usize, cover: f64, gain: f64 },
    Leaf { value: f64, cover: f64 },
}

impl Node {
    /// Number of training rows that reached the node.
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Binary tree stored as a node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, rule, left, right, .. } => {
                    i = if rule.goes_left(x[*feature]) { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub schema_hash: String,
    pub params: GbdtParams,
    /// Weights the model was trained with.
    pub class_weights: Vec<f64>,
    pub base_scores: Vec<f64>,
    /// `trees[c]` holds the trees of class `c`, one per accepted round.
    pub trees: Vec<Vec<Tree>>,
    /// Mean weighted training loss before the first round and after each
    /// accepted round.
    pub loss_history: Vec<f64>,
}

impl GbdtModel {
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.base_scores
            .iter()
            .zip(&self.trees)
            .map(|(b, ts)| b + ts.iter().map(|t| t.predict(x)).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x))
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    pub fn predict_proba_batch<E: Executor>(&self, exec: &E, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        exec.map_indexed(rows.len(), |i| self.predict_proba(&rows[i]))
    }

    pub fn rounds(&self) -> usize {
        self.trees.first().map_or(0, Vec::len)
    }

    /// Structural checks for a model read from disk.
    pub fn validate(&self) -> Result<(), GbdtError> {
        if self.base_scores.len() != self.n_classes || self.trees.len() != self.n_classes {
            return Err(GbdtError::Malformed("class count disagrees with scores or trees"));
        }
        if self.base_scores.iter().any(|b| !b.is_finite()) {
            return Err(GbdtError::Malformed("non-finite base score"));
        }
        for tree in self.trees.iter().flatten() {
            if tree.nodes.is_empty() {
                return Err(GbdtError::Malformed("empty tree"));
            }
            for node in &tree.nodes {
                match node {
                    Node::Leaf { value, .. } if !value.is_finite() => {
                        return Err(GbdtError::Malformed("non-finite leaf value"))
                    }
                    Node::Split { feature, left, right, .. } => {
                        if *feature >= self.n_features {
                            return Err(GbdtError::Malformed("split on out-of-schema feature"));
                        }
                        if *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return Err(GbdtError::Malformed("child index out of range"));
                        }
                    }
                    Node::Leaf { .. } => {}
                }
            }
        }
        Ok(())
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Training rows; `categorical[f]` marks integer-coded columns.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub features: &'a [Vec<f64>],
    pub labels: &'a [usize],
    pub categorical: &'a [bool],
    pub n_classes: usize,
    pub schema_hash: &'a str,
}

enum Binning {
    /// Bin `b` holds values in `(thresholds[b−1], thresholds[b]]`.
    Numeric(Vec<f64>),
    /// Bin `b` holds the category `values[b]`.
    Categorical(Vec<i64>),
}

impl Binning {
    fn fit(column: &[f64], categorical: bool, max_bins: usize) -> Self {
        let mut values: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
        values.sort_by(f64::total_cmp);
        if categorical {
            let mut cats: Vec<i64> = values.iter().map(|&v| v as i64).collect();
            cats.dedup();
            return Binning::Categorical(cats);
        }
        let mut distinct = values.clone();
        distinct.dedup();
        let thresholds = if distinct.len() <= max_bins {
            distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
        } else {
            let mut t: Vec<f64> = (1..max_bins)
                .map(|i| crate::stats::quantile_sorted(&values, i as f64 / max_bins as f64))
                .collect();
            t.dedup();
            if t.last() == distinct.last() {
                t.pop();
            }
            t
        };
        Binning::Numeric(thresholds)
    }

    fn n_bins(&self) -> usize {
        match self {
            Binning::Numeric(t) => t.len() + 1,
            // One spare bin for values unseen during fitting.
            Binning::Categorical(v) => v.len() + 1,
        }
    }

    fn bin(&self, x: f64) -> u16 {
        match self {
            Binning::Numeric(t) => {
                if x.is_nan() {
                    0
                } else {
                    t.partition_point(|&th| th < x) as u16
                }
            }
            Binning::Categorical(v) => match v.binary_search(&(x as i64)) {
                Ok(i) if x.fract() == 0.0 => i as u16,
                _ => v.len() as u16,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BinStats {
    g: f64,
    h: f64,
    n: usize,
}

enum BinSplit {
    /// Bins `0..=k` go left.
    Upto(usize),
    /// Bins with `mask[b]` go left.
    Subset(Vec<bool>),
}

struct Candidate {
    gain: f64,
    feature: usize,
    split: BinSplit,
}

struct GrowCtx<'a> {
    bins: &'a [Vec<u16>],
    binnings: &'a [Binning],
    min_samples_leaf: usize,
    lambda: f64,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn best_split_for_feature(ctx: &GrowCtx, f: usize, rows: &[u32], g: &[f64], h: &[f64]) -> Option<Candidate> {
    let binning = &ctx.binnings[f];
    let nb = binning.n_bins();
    if nb < 2 {
        return None;
    }
    let col = &ctx.bins[f];
    let mut hist = vec![BinStats::default(); nb];
    for &r in rows {
        let r = r as usize;
        let b = &mut hist[col[r] as usize];
        b.g += g[r];
        b.h += h[r];
        b.n += 1;
    }
    let total = hist.iter().fold(BinStats::default(), |a, b| BinStats { g: a.g + b.g, h: a.h + b.h, n: a.n + b.n });
    let parent = score(total.g, total.h, ctx.lambda);
    let order: Vec<usize> = match binning {
        Binning::Numeric(_) => (0..nb).collect(),
        Binning::Categorical(_) => {
            let mut o: Vec<usize> = (0..nb).filter(|&b| hist[b].n > 0).collect();
            o.sort_by(|&a, &b| {
                let ra = hist[a].g / (hist[a].h + ctx.lambda);
                let rb = hist[b].g / (hist[b].h + ctx.lambda);
                ra.total_cmp(&rb).then(a.cmp(&b))
            });
            o
        }
    };
    let mut left = BinStats::default();
    let mut best: Option<(f64, usize)> = None;
    for (pos, &b) in order.iter().enumerate().take(order.len().saturating_sub(1)) {
        left.g += hist[b].g;
        left.h += hist[b].h;
        left.n += hist[b].n;
        let right_n = total.n - left.n;
        if left.n < ctx.min_samples_leaf || right_n < ctx.min_samples_leaf {
            continue;
        }
        let gain = score(left.g, left.h, ctx.lambda) + score(total.g - left.g, total.h - left.h, ctx.lambda) - parent;
        if gain > 1e-12 && best.is_none_or(|(bg, _)| gain > bg) {
            best = Some((gain, pos));
        }
    }
    let (gain, pos) = best?;
    let split = match binning {
        Binning::Numeric(_) => BinSplit::Upto(order[pos]),
        Binning::Categorical(_) => {
            let mut mask = vec![false; nb];
            for &b in &order[..=pos] {
                mask[b] = true;
            }
            BinSplit::Subset(mask)
        }
    };
    Some(Candidate { gain, feature: f, split })
}

fn best_split<E: Executor>(exec: &E, ctx: &GrowCtx, rows: &[u32], g: &[f64], h: &[f64]) -> Option<Candidate> {
    if rows.len() < 2 * ctx.min_samples_leaf {
        return None;
    }
    let per_feature = exec.map_indexed(ctx.bins.len(), |f| best_split_for_feature(ctx, f, rows, g, h));
    let mut best: Option<Candidate> = None;
    for c in per_feature.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    best
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    candidate: Option<Candidate>,
}

fn leaf_value(rows: &[u32], g: &[f64], h: &[f64], lambda: f64) -> f64 {
    let (gs, hs) = rows.iter().fold((0.0, 0.0), |(a, b), &r| (a + g[r as usize], b + h[r as usize]));
    let v = -gs / (hs + lambda);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Grows one tree; returns it together with each training row's leaf value.
fn grow_tree<E: Executor>(
    exec: &E,
    ctx: &GrowCtx,
    n_rows: usize,
    g: &[f64],
    h: &[f64],
    num_leaves: usize,
    max_depth: usize,
) -> (Tree, Vec<f64>) {
    let all: Vec<u32> = (0..n_rows as u32).collect();
    let mut nodes = vec![Node::Leaf { value: 0.0, cover: n_rows as f64 }];
    let candidate = if max_depth > 0 { best_split(exec, ctx, &all, g, h) } else { None };
    let mut open = vec![OpenLeaf { node: 0, rows: all, depth: 0, candidate }];
    let mut n_leaves = 1;

    while n_leaves < num_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(c) = &leaf.candidate {
                if pick.is_none_or(|p| c.gain > open[p].candidate.as_ref().map_or(0.0, |pc| pc.gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(idx) = pick else { break };
        let leaf = open.remove(idx);
        let cand = leaf.candidate.expect("picked leaf has a candidate");
        let col = &ctx.bins[cand.feature];
        let goes_left = |b: u16| match &cand.split {
            BinSplit::Upto(k) => (b as usize) <= *k,
            BinSplit::Subset(mask) => mask[b as usize],
        };
        let (lrows, rrows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| goes_left(col[r as usize]));
        let rule = match (&cand.split, &ctx.binnings[cand.feature]) {
            (BinSplit::Upto(k), Binning::Numeric(t)) => SplitRule::Threshold(t[*k]),
            (BinSplit::Subset(mask), Binning::Categorical(values)) => {
                SplitRule::Categories(values.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect())
            }
            _ => unreachable!("split kind follows the binning kind"),
        };
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { value: 0.0, cover: lrows.len() as f64 });
        nodes.push(Node::Leaf { value: 0.0, cover: rrows.len() as f64 });
        nodes[leaf.node] =
            Node::Split { feature: cand.feature, rule, left, right, cover: leaf.rows.len() as f64, gain: cand.gain };
        let depth = leaf.depth + 1;
        for (node, rows) in [(left, lrows), (right, rrows)] {
            let candidate = if depth < max_depth { best_split(exec, ctx, &rows, g, h) } else { None };
            open.push(OpenLeaf { node, rows, depth, candidate });
        }
        n_leaves += 1;
    }

    let mut row_values = vec![0.0; n_rows];
    for leaf in &open {
        let v = leaf_value(&leaf.rows, g, h, ctx.lambda);
        if let Node::Leaf { value, .. } = &mut nodes[leaf.node] {
            *value = v;
        }
        for &r in &leaf.rows {
            row_values[r as usize] = v;
        }
    }
    (Tree { nodes }, row_values)
}

fn scale_tree(tree: &mut Tree, s: f64) {
    for node in &mut tree.nodes {
        if let Node::Leaf { value, .. } = node {
            *value *= s;
        }
    }
}

fn mean_loss(scores: &[Vec<f64>], labels: &[usize], gamma: f64, weights: &[f64]) -> f64 {
    let total: f64 = scores.iter().zip(labels).map(|(s, &l)| focal_loss(&softmax(s), l, gamma, weights).loss).sum();
    total / scores.len() as f64
}

/// Fits a model on every row of `data`; hold-out rows must already be
/// excluded by the caller.
pub fn train<E: Executor>(exec: &E, data: TrainingData, params: &GbdtParams) -> Result<GbdtModel, GbdtError> {
    let n = data.features.len();
    let k = data.n_classes;
    if n == 0 || k == 0 {
        return Err(GbdtError::EmptyTrainingSet);
    }
    params.validate(k)?;
    let n_features = data.features[0].len();
    for (row, x) in data.features.iter().enumerate() {
        if x.len() != n_features {
            return Err(GbdtError::RaggedRow { row, got: x.len(), expected: n_features });
        }
    }
    if data.labels.len() != n {
        return Err(GbdtError::InvalidParams("label count differs from row count"));
    }
    if data.categorical.len() != n_features {
        return Err(GbdtError::MaskLength { got: data.categorical.len(), expected: n_features });
    }
    let weights = match &params.class_weights {
        Some(w) => w.clone(),
        None => balanced_class_weights(data.labels, k)?,
    };
    for (row, &l) in data.labels.iter().enumerate() {
        if l >= k {
            return Err(GbdtError::LabelOutOfRange { row, label: l, n_classes: k });
        }
    }

    let binnings: Vec<Binning> = exec.map_indexed(n_features, |f| {
        let column: Vec<f64> = data.features.iter().map(|x| x[f]).collect();
        Binning::fit(&column, data.categorical[f], params.histogram_bins)
    });
    let bins: Vec<Vec<u16>> =
        exec.map_indexed(n_features, |f| data.features.iter().map(|x| binnings[f].bin(x[f])).collect());
    let ctx = GrowCtx { bins: &bins, binnings: &binnings, min_samples_leaf: params.min_samples_leaf, lambda: params.lambda };

    let mut prior = vec![0.0; k];
    for &l in data.labels {
        prior[l] += weights[l];
    }
    let total: f64 = prior.iter().sum();
    let base_scores: Vec<f64> = prior.iter().map(|p| (p / total).max(PROB_EPS).ln()).collect();

    let mut scores: Vec<Vec<f64>> = vec![base_scores.clone(); n];
    let mut loss = mean_loss(&scores, data.labels, params.gamma, &weights);
    let mut loss_history = vec![loss];
    let mut trees: Vec<Vec<Tree>> = vec![Vec::new(); k];

    for _round in 0..params.num_rounds {
        let terms: Vec<FocalTerms> = exec.map_indexed(n, |i| {
            focal_loss(&softmax(&scores[i]), data.labels[i], params.gamma, &weights)
        });
        let mut round_trees = Vec::with_capacity(k);
        let mut round_values = Vec::with_capacity(k);
        for c in 0..k {
            let g: Vec<f64> = terms.iter().map(|t| t.gradient[c]).collect();
            let h: Vec<f64> = terms.iter().map(|t| t.hessian[c].max(MIN_HESSIAN)).collect();
            let (tree, values) = grow_tree(exec, &ctx, n, &g, &h, params.num_leaves, params.max_depth);
            round_trees.push(tree);
            round_values.push(values);
        }

        let mut step = params.learning_rate;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<Vec<f64>> =
                (0..n).map(|i| (0..k).map(|c| scores[i][c] + step * round_values[c][i]).collect()).collect();
            let trial_loss = mean_loss(&trial, data.labels, params.gamma, &weights);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            step /= 2.0;
        }
        let Some((new_scores, new_loss)) = accepted else { break };
        for (c, mut tree) in round_trees.into_iter().enumerate() {
            scale_tree(&mut tree, step);
            trees[c].push(tree);
        }
        scores = new_scores;
        loss = new_loss;
        loss_history.push(loss);
    }

    Ok(GbdtModel {
        n_classes: k,
        n_features,
        schema_hash: data.schema_hash.into(),
        params: params.clone(),
        class_weights: weights,
        base_scores,
        trees,
        loss_history,
    })
}

/// Core-level decision from its patch posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreDecision {
    pub label: usize,
    pub votes: Vec<usize>,
    pub mean_probabilities: Vec<f64>,
}

/// Plurality vote over patch argmax classes. Ties go to the higher mean
/// probability, then to the lower class index.
pub fn vote_core(patch_probabilities: &[Vec<f64>]) -> Result<CoreDecision, GbdtError> {
    let first = patch_probabilities.first().ok_or(GbdtError::EmptyCore)?;
    let k = first.len();
    let mut votes = vec![0usize; k];
    let mut mean = vec![0.0; k];
    for p in patch_probabilities {
        votes[argmax(p)] += 1;
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let n = patch_probabilities.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let mut label = 0;
    for c in 1..k {
        if votes[c] > votes[label] || (votes[c] == votes[label] && mean[c] > mean[label]) {
            label = c;
        }
    }
    Ok(CoreDecision { label, votes, mean_probabilities: mean })
}

pub fn predict_core(model: &GbdtModel, patches: &[Vec<f64>]) -> Result<CoreDecision, GbdtError> {
    let probs: Vec<Vec<f64>> = patches.iter().map(|x| model.predict_proba(x)).collect();
    vote_core(&probs)
}

/// Assigns each item to one of `k` folds, stratified by label: each class
/// is shuffled with its own stream and dealt round-robin, continuing where
/// the previous class stopped so fold sizes stay balanced.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; labels.len()];
    if k == 0 {
        return fold;
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut offset = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng::labeled_stream(seed, "folds", c as u64));
        for (j, &i) in members.iter().enumerate() {
            fold[i] = (offset + j) % k;
        }
        offset += members.len();
    }
    fold
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    fn train_simple(features: &[Vec<f64>], labels: &[usize], k: usize, params: &GbdtParams) -> GbdtModel {
        let mask = vec![false; features[0].len()];
        let data = TrainingData { features, labels, categorical: &mask, n_classes: k, schema_hash: "test" };
        train(&Sequential, data, params).unwrap()
    }

    #[test]
    fn focal_loss_edges() {
        let t = focal_loss(&[0.0, 1.0], 1, 2.0, &[1.0, 1.0]);
        assert_eq!(t.loss, 0.0);
        let p = [0.2, 0.5, 0.3];
        let t = focal_loss(&p, 1, 0.0, &[1.0, 2.0, 1.0]);
        assert!((t.loss - (-2.0 * 0.5f64.ln())).abs() < 1e-12);
        // Cross-entropy gradient is w(p − onehot).
        assert!((t.gradient[0] - 2.0 * 0.2).abs() < 1e-12);
        assert!((t.gradient[1] - 2.0 * (0.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn class_weights() {
        assert_eq!(balanced_class_weights(&[0, 1, 0, 1], 2).unwrap(), [1.0, 1.0]);
        let labels: Vec<usize> = core::iter::repeat_n(0, 30).chain(core::iter::repeat_n(1, 10)).collect();
        let w = balanced_class_weights(&labels, 2).unwrap();
        assert!((w[0] - 40.0 / 60.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
        assert_eq!(balanced_class_weights(&[0, 0], 3).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(balanced_class_weights(&[], 2), Err(GbdtError::EmptyTrainingSet));
    }

    #[test]
    fn constant_labels_give_constant_model() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y = vec![2; 20];
        let m = train_simple(&x, &y, 3, &GbdtParams::default());
        for v in [-100.0, 3.0, 1e6] {
            assert_eq!(m.predict_class(&[v]), 2);
        }
    }

    #[test]
    fn splits_only_on_informative_feature() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![1.0, i as f64, 5.0]).collect();
        let y: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
        let m = train_simple(&x, &y, 2, &GbdtParams { num_rounds: 10, ..Default::default() });
        assert!(m.trees.iter().flatten().flat_map(Tree::split_features).all(|f| f == 1));
        assert!(m.trees.iter().flatten().any(|t| t.nodes.len() > 1));
        assert_eq!(m.predict_class(&[1.0, 2.0, 5.0]), 0);
        assert_eq!(m.predict_class(&[1.0, 50.0, 5.0]), 1);
    }

    #[test]
    fn categorical_split() {
        // Categories 1 and 3 form class 1; a threshold cannot isolate them.
        let x: Vec<Vec<f64>> = (0..80).map(|i| vec![(i % 4) as f64]).collect();
        let y: Vec<usize> = (0..80).map(|i| usize::from(i % 2 == 1)).collect();
        let data = TrainingData { features: &x, labels: &y, categorical: &[true], n_classes: 2, schema_hash: "" };
        let params = GbdtParams { num_rounds: 5, num_leaves: 2, ..Default::default() };
        let m = train(&Sequential, data, &params).unwrap();
        match &m.trees[0][0].nodes[0] {
            Node::Split { rule: SplitRule::Categories(set), .. } => {
                assert!(set == &[0, 2] || set == &[1, 3]);
            }
            other => panic!("expected a categorical split, got {other:?}"),
        }
        for c in 0..4 {
            assert_eq!(m.predict_class(&[c as f64]), c % 2);
        }
    }

    #[test]
    fn loss_is_monotone_and_depth_capped() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![(i * 37 % 100) as f64, (i * 11 % 7) as f64]).collect();
        let y: Vec<usize> = (0..100).map(|i| (i * 13 % 3) as usize).collect();
        let m = train_simple(&x, &y, 3, &GbdtParams { num_rounds: 30, max_depth: 2, min_samples_leaf: 1, ..Default::default() });
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(m.trees.iter().flatten().all(|t| t.depth() <= 2));
        m.validate().unwrap();
    }

    #[test]
    fn core_vote_rules() {
        let a = vec![0.9, 0.1];
        let b = vec![0.2, 0.8];
        assert_eq!(vote_core(&[a.clone(), a.clone(), b.clone()]).unwrap().label, 0);
        assert_eq!(vote_core(core::slice::from_ref(&b)).unwrap().label, 1);
        let d = vote_core(&[vec![0.51, 0.49], vec![0.45, 0.55]]).unwrap();
        assert_eq!(d.label, 1);
        assert!((d.mean_probabilities[1] - 0.52).abs() < 1e-12);
        let d = vote_core(&[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        assert_eq!(d.label, 0);
        assert_eq!(vote_core(&[]), Err(GbdtError::EmptyCore));
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let folds = stratified_folds(&labels, 5, 9);
        for f in 0..5 {
            let n0 = (0..50).filter(|&i| folds[i] == f && labels[i] == 0).count();
            assert_eq!(n0, 5);
        }
        assert_eq!(folds, stratified_folds(&labels, 5, 9));
    }
}
