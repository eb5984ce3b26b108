//! Support-weighted one-vs-rest metrics, percentile bootstrap intervals and
//! paired bootstrap comparisons.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Executor;
use crate::rng;
use crate::stats;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("prediction set is empty")]
    Empty,
    #[error("row {row}: label {label} is outside the {n_classes} classes")]
    LabelOutOfRange { row: usize, label: usize, n_classes: usize },
    #[error("row {row}: probabilities are missing or not on the simplex")]
    BadProbabilities { row: usize },
    #[error("{0} is undefined for this prediction set")]
    Undefined(Metric),
    #[error("prediction sets are not aligned: {0}")]
    Misaligned(String),
    #[error("bootstrap needs at least one replicate")]
    NoReplicates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub case_id: String,
    pub truth: usize,
    pub predicted: usize,
    pub probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub class_names: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn new(class_names: Vec<String>, rows: Vec<PredictionRow>) -> Result<Self, EvalError> {
        let k = class_names.len();
        for (row, r) in rows.iter().enumerate() {
            for label in [r.truth, r.predicted] {
                if label >= k {
                    return Err(EvalError::LabelOutOfRange { row, label, n_classes: k });
                }
            }
            if let Some(p) = &r.probabilities {
                let sum: f64 = p.iter().sum();
                if p.len() != k || p.iter().any(|v| !(0.0..=1.0 + 1e-9).contains(v)) || (sum - 1.0).abs() > 1e-6 {
                    return Err(EvalError::BadProbabilities { row });
                }
            }
        }
        Ok(Self { class_names, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn support(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_classes()];
        for r in &self.rows {
            s[r.truth] += 1;
        }
        s
    }

    /// Class indices with no true instances.
    pub fn absent_classes(&self) -> Vec<usize> {
        self.support().iter().enumerate().filter(|(_, &n)| n == 0).map(|(c, _)| c).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    F1,
    Sensitivity,
    Specificity,
    Auroc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Self::Accuracy, Self::F1, Self::Sensitivity, Self::Specificity, Self::Auroc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::F1 => "f1",
            Self::Sensitivity => "sensitivity",
            Self::Specificity => "specificity",
            Self::Auroc => "auroc",
        }
    }
}

impl core::fmt::Display for Metric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| s.to_string())
    }
}

fn confusion_of(preds: &PredictionSet, idx: &[usize]) -> Vec<Vec<usize>> {
    let k = preds.n_classes();
    let mut m = vec![vec![0; k]; k];
    for &i in idx {
        let r = &preds.rows[i];
        m[r.truth][r.predicted] += 1;
    }
    m
}

/// `counts[truth][predicted]`.
pub fn confusion_matrix(preds: &PredictionSet) -> Vec<Vec<usize>> {
    let idx: Vec<usize> = (0..preds.len()).collect();
    confusion_of(preds, &idx)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest per-class F1; 0 when the class has no true and no predicted
/// instances.
pub fn per_class_f1(confusion: &[Vec<usize>]) -> Vec<f64> {
    let k = confusion.len();
    (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let fn_ = confusion[c].iter().sum::<usize>() - tp;
            let fp = (0..k).map(|t| confusion[t][c]).sum::<usize>() - tp;
            ratio(2 * tp, 2 * tp + fp + fn_)
        })
        .collect()
}

/// Mann-Whitney AUROC with average ranks for ties; `None` without both a
/// positive and a negative.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&t| positive[order[t]]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn metric_on(preds: &PredictionSet, idx: &[usize], metric: Metric) -> Result<f64, EvalError> {
    if idx.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = idx.len();
    let conf = confusion_of(preds, idx);
    let k = conf.len();
    if metric == Metric::Accuracy {
        return Ok((0..k).map(|c| conf[c][c]).sum::<usize>() as f64 / n as f64);
    }
    let support: Vec<usize> = conf.iter().map(|r| r.iter().sum()).collect();
    let f1 = if metric == Metric::F1 { per_class_f1(&conf) } else { Vec::new() };
    let mut num = 0.0;
    let mut weight = 0usize;
    for c in (0..k).filter(|&c| support[c] > 0) {
        let tp = conf[c][c];
        let fp = (0..k).map(|t| conf[t][c]).sum::<usize>() - tp;
        let value = match metric {
            Metric::F1 => Some(f1[c]),
            Metric::Sensitivity => Some(ratio(tp, support[c])),
            Metric::Specificity => {
                let negatives = n - support[c];
                Some(if negatives == 0 { 1.0 } else { (negatives - fp) as f64 / negatives as f64 })
            }
            Metric::Auroc => {
                let mut scores = Vec::with_capacity(n);
                let mut positive = Vec::with_capacity(n);
                for &i in idx {
                    let r = &preds.rows[i];
                    let p = r.probabilities.as_ref().ok_or(EvalError::BadProbabilities { row: i })?;
                    scores.push(p[c]);
                    positive.push(r.truth == c);
                }
                auroc(&scores, &positive)
            }
            Metric::Accuracy => unreachable!("handled above"),
        };
        // Classes where the one-vs-rest value is undefined drop out of the
        // weighting.
        if let Some(v) = value {
            num += support[c] as f64 * v;
            weight += support[c];
        }
    }
    if weight == 0 {
        return Err(EvalError::Undefined(metric));
    }
    Ok(num / weight as f64)
}

/// Support-weighted one-vs-rest metric; accuracy is plain top-1. Classes
/// absent from the truth carry zero weight.
pub fn weighted_metric(preds: &PredictionSet, metric: Metric) -> Result<f64, EvalError> {
    let idx: Vec<usize> = (0..preds.len()).collect();
    metric_on(preds, &idx, metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

fn resample(seed: u64, replicate: usize, n: usize) -> Vec<usize> {
    let mut rng = rng::labeled_stream(seed, "bootstrap", replicate as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Sorts finite replicate values and returns the `(1−level)/2` and
/// `(1+level)/2` percentiles.
fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    let sorted = stats::sorted(&values.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>());
    if sorted.is_empty() {
        return None;
    }
    let a = (1.0 - level) / 2.0;
    Some((stats::quantile_sorted(&sorted, a), stats::quantile_sorted(&sorted, 1.0 - a)))
}

/// Case-level percentile bootstrap (2.5 / 97.5). Replicate `r` draws from
/// its own stream, so the result does not depend on the executor.
/// Replicates where the metric is undefined are skipped.
pub fn bootstrap_ci<E: Executor>(
    exec: &E,
    preds: &PredictionSet,
    metric: Metric,
    replicates: usize,
    seed: u64,
) -> Result<Interval, EvalError> {
    if replicates == 0 {
        return Err(EvalError::NoReplicates);
    }
    let point = weighted_metric(preds, metric)?;
    let n = preds.len();
    let values: Vec<f64> =
        exec.map_indexed(replicates, |r| metric_on(preds, &resample(seed, r, n), metric).unwrap_or(f64::NAN));
    let (lo, hi) = percentile_interval(&values, 0.95).ok_or(EvalError::Undefined(metric))?;
    Ok(Interval { point, lo, hi })
}

/// Paired accuracy comparison of two prediction sets over the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    /// Accuracy of `a` minus accuracy of `b`.
    pub difference: f64,
    pub ci95: (f64, f64),
    pub ci90: (f64, f64),
    pub delta: f64,
    pub significant: bool,
    pub equivalent: bool,
    pub non_inferior: bool,
    pub conclusion: String,
}

fn align(a: &PredictionSet, b: &PredictionSet) -> Result<Vec<usize>, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Misaligned(alloc::format!("{} vs {} rows", a.len(), b.len())));
    }
    if a.class_names != b.class_names {
        return Err(EvalError::Misaligned("class names differ".into()));
    }
    let index: BTreeMap<&str, usize> = b.rows.iter().enumerate().map(|(i, r)| (r.case_id.as_str(), i)).collect();
    if index.len() != b.len() {
        return Err(EvalError::Misaligned("duplicate case ids".into()));
    }
    a.rows
        .iter()
        .map(|r| {
            let j = *index
                .get(r.case_id.as_str())
                .ok_or_else(|| EvalError::Misaligned(alloc::format!("case `{}` missing", r.case_id)))?;
            if b.rows[j].truth != r.truth {
                return Err(EvalError::Misaligned(alloc::format!("case `{}` has different truth", r.case_id)));
            }
            Ok(j)
        })
        .collect()
}

/// Bootstraps the paired accuracy difference. Significant when the 95%
/// interval excludes 0; equivalent when the 90% interval lies inside
/// `(−δ, δ)`; non-inferior when its lower bound exceeds `−δ`. Equivalence
/// and significance can both hold and are then both reported.
pub fn paired_test_and_tost<E: Executor>(
    exec: &E,
    a: &PredictionSet,
    b: &PredictionSet,
    delta: f64,
    replicates: usize,
    seed: u64,
) -> Result<PairedComparison, EvalError> {
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    if replicates == 0 {
        return Err(EvalError::NoReplicates);
    }
    let pair = align(a, b)?;
    let correct_a: Vec<f64> = a.rows.iter().map(|r| f64::from(u8::from(r.truth == r.predicted))).collect();
    let correct_b: Vec<f64> = pair.iter().map(|&j| f64::from(u8::from(b.rows[j].truth == b.rows[j].predicted))).collect();
    let n = a.len();
    let diff_on = |idx: &[usize]| idx.iter().map(|&i| correct_a[i] - correct_b[i]).sum::<f64>() / idx.len() as f64;
    let all: Vec<usize> = (0..n).collect();
    let difference = diff_on(&all);
    let values = exec.map_indexed(replicates, |r| diff_on(&resample(seed, r, n)));
    let ci95 = percentile_interval(&values, 0.95).expect("replicates are finite");
    let ci90 = percentile_interval(&values, 0.90).expect("replicates are finite");
    let significant = ci95.0 > 0.0 || ci95.1 < 0.0;
    let equivalent = ci90.0 > -delta && ci90.1 < delta;
    let non_inferior = ci90.0 > -delta;
    let mut parts: Vec<&str> = Vec::new();
    if significant {
        parts.push("Significant Difference");
    }
    if equivalent {
        parts.push("Equivalent");
    } else if non_inferior {
        parts.push("Non-inferior");
    }
    let conclusion = if parts.is_empty() { "--".to_string() } else { parts.join("; ") };
    Ok(PairedComparison { difference, ci95, ci90, delta, significant, equivalent, non_inferior, conclusion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: String,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub class_names: Vec<String>,
    /// Metric name to interval. Intervals are widened to contain the point
    /// estimate when the percentiles miss it.
    pub metrics: BTreeMap<String, Interval>,
    pub per_class_f1: Vec<ClassF1>,
    pub confusion: Vec<Vec<usize>>,
    pub absent_classes: Vec<String>,
    /// Metrics that could not be computed, with the reason.
    pub skipped: BTreeMap<String, String>,
    pub replicates: usize,
    pub seed: u64,
}

pub fn evaluate<E: Executor>(
    exec: &E,
    preds: &PredictionSet,
    replicates: usize,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let has_probs = preds.rows.iter().all(|r| r.probabilities.is_some());
    let mut metrics = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for m in Metric::ALL {
        if m == Metric::Auroc && !has_probs {
            skipped.insert(m.name().to_string(), "probabilities missing".to_string());
            continue;
        }
        match bootstrap_ci(exec, preds, m, replicates, seed) {
            Ok(mut iv) => {
                iv.lo = iv.lo.min(iv.point);
                iv.hi = iv.hi.max(iv.point);
                metrics.insert(m.name().to_string(), iv);
            }
            Err(EvalError::Undefined(_)) => {
                skipped.insert(m.name().to_string(), "undefined for this prediction set".to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let confusion = confusion_matrix(preds);
    let support = preds.support();
    let per_class_f1 = per_class_f1(&confusion)
        .into_iter()
        .enumerate()
        .map(|(c, f1)| ClassF1 { class: preds.class_names[c].clone(), f1, support: support[c] })
        .collect();
    Ok(MetricReport {
        n: preds.len(),
        class_names: preds.class_names.clone(),
        metrics,
        per_class_f1,
        confusion,
        absent_classes: preds.absent_classes().into_iter().map(|c| preds.class_names[c].clone()).collect(),
        skipped,
        replicates,
        seed,
    })
}
