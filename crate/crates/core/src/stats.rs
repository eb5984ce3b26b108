//! Small descriptive-statistics kit shared by the feature and evaluation stages.

use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population central moments `(m2, m3, m4)` about the mean.
fn central_moments(values: &[f64], mu: f64) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Population standard deviation (divisor `n`).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let (m2, _, _) = central_moments(values, mean(values));
    m2.sqrt()
}

/// Relative scale below which a sample is treated as constant.
const DEGENERATE_SPREAD: f64 = 1e-24;

fn is_degenerate(m2: f64, mu: f64) -> bool {
    m2 <= DEGENERATE_SPREAD * (1.0 + mu * mu)
}

/// Population skewness `m3 / m2^1.5`; 0 for constant or size-1 samples.
pub fn skewness(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    let (m2, m3, _) = central_moments(values, mu);
    if is_degenerate(m2, mu) {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Excess kurtosis `m4 / m2² − 3`; 0 for constant or size-1 samples.
pub fn kurtosis(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    let (m2, _, m4) = central_moments(values, mu);
    if is_degenerate(m2, mu) {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolated quantile at position `q·(n−1)` of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            if lo == hi {
                sorted[lo]
            } else {
                sorted[lo] + (sorted[hi] - sorted[lo]) * frac
            }
        }
    }
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    quantile_sorted(&sorted(values), q)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Interquartile range `p75 − p25`.
pub fn iqr(values: &[f64]) -> f64 {
    let s = sorted(values);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}
