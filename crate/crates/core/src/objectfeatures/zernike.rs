//! Zernike moment magnitudes of a binary object, orders 0 through 9.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use crate::prelude::*;

use super::ObjectPixels;

pub const ZERNIKE_MAX_ORDER: usize = 9;

/// `(n, m)` pairs with `0 ≤ m ≤ n ≤ 9` and `n − m` even; 30 in total.
pub fn zernike_indices() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for n in 0..=ZERNIKE_MAX_ORDER {
        for m in (n % 2..=n).step_by(2) {
            out.push((n, m));
        }
    }
    out
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// Coefficients of the radial polynomial `R_n^m(ρ) = Σ c_s ρ^(n−2s)`.
fn radial_coefficients(n: usize, m: usize) -> Vec<(i32, f64)> {
    (0..=(n - m) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            let c = sign * factorial(n - s)
                / (factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s));
            ((n - 2 * s) as i32, c)
        })
        .collect()
}

/// Magnitudes `|Z_nm|` in [`zernike_indices`] order. The object is mapped
/// into the unit disk circumscribing its bounding box.
pub(super) fn zernike_magnitudes(obj: &ObjectPixels) -> Vec<f64> {
    let b = obj.bbox;
    let cx = (b.width() - 1) as f64 / 2.0;
    let cy = (b.height() - 1) as f64 / 2.0;
    let radius = ((b.width() * b.width() + b.height() * b.height()) as f64).sqrt() / 2.0;
    let pixel_area = 1.0 / (radius * radius);
    let polar: Vec<(f64, f64)> = obj
        .coords
        .iter()
        .map(|&(x, y)| {
            let dx = ((x - b.min_x) as f64 - cx) / radius;
            let dy = ((y - b.min_y) as f64 - cy) / radius;
            ((dx * dx + dy * dy).sqrt(), dy.atan2(dx))
        })
        .collect();
    zernike_indices()
        .into_iter()
        .map(|(n, m)| {
            let coeffs = radial_coefficients(n, m);
            let (mut re, mut im) = (0.0, 0.0);
            for &(rho, theta) in &polar {
                let r: f64 = coeffs.iter().map(|&(p, c)| c * rho.powi(p)).sum();
                let angle = m as f64 * theta;
                re += r * angle.cos();
                im -= r * angle.sin();
            }
            let scale = (n as f64 + 1.0) / PI * pixel_area;
            scale * (re * re + im * im).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_moments() {
        assert_eq!(zernike_indices().len(), 30);
    }

    #[test]
    fn radial_polynomials_are_unit_at_rim() {
        for (n, m) in zernike_indices() {
            let at_one: f64 = radial_coefficients(n, m).iter().map(|c| c.1).sum();
            assert!((at_one - 1.0).abs() < 1e-12, "R_{n}^{m}(1) = {at_one}");
        }
        assert_eq!(radial_coefficients(2, 0), [(2, 2.0), (0, -1.0)]);
    }
}
