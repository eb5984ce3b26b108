//! Area/shape descriptors for one object.
//!
//! Perimeter is a four-direction Cauchy–Crofton estimate over pixel centres:
//! `P = π/8 · (N₀ + N₉₀ + (N₄₅ + N₁₃₅)/√2)`, where `N_θ` counts object /
//! background transitions between neighbouring pixels along direction θ.
//! Feret diameters are caliper widths of the pixel-centre hull plus half a
//! pixel, which centres the estimate on the rasterised outline.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

#[allow(unused_imports)]
use crate::prelude::*;
use serde::{Deserialize, Serialize};

use super::edt::squared_distance_to_background;
use super::hull::{convex_hull, hull_contains, max_caliper, min_caliper, Pt};
use super::zernike::{zernike_indices, zernike_magnitudes};
use super::{FeatureError, LabelMask, ObjectPixels};
use crate::raster::Raster;
use crate::stats;

pub const SHAPE_FEATURE_COUNT: usize = 62;

const FERET_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeFeatures {
    pub area: f64,
    pub bbox_area: f64,
    pub convex_hull_area: f64,
    pub perimeter: f64,
    pub form_factor: f64,
    pub compactness: f64,
    pub eccentricity: f64,
    pub equivalent_diameter: f64,
    pub euler_number: f64,
    pub major_axis_length: f64,
    pub minor_axis_length: f64,
    /// Degrees in (−90, 90], counter-clockwise from +x with y pointing up.
    pub orientation: f64,
    pub solidity: f64,
    pub max_feret: f64,
    pub min_feret: f64,
    pub max_radius: f64,
    pub mean_radius: f64,
    pub median_radius: f64,
    pub normalized_moment_1_1: f64,
    pub hu_moments: [f64; 7],
    pub zernike: Vec<f64>,
    /// Row-major, axes ordered (row, column).
    pub inertia_tensor: [f64; 4],
    pub inertia_eigenvalues: [f64; 2],
}

impl ShapeFeatures {
    pub fn names() -> Vec<String> {
        let mut names: Vec<String> = [
            "Area",
            "BoundingBoxArea",
            "ConvexArea",
            "Perimeter",
            "FormFactor",
            "Compactness",
            "Eccentricity",
            "EquivalentDiameter",
            "EulerNumber",
            "MajorAxisLength",
            "MinorAxisLength",
            "Orientation",
            "Solidity",
            "MaxFeretDiameter",
            "MinFeretDiameter",
            "MaximumRadius",
            "MeanRadius",
            "MedianRadius",
            "NormalizedMoment_1_1",
        ]
        .iter()
        .map(|s| String::from(*s))
        .collect();
        names.extend((0..7).map(|i| alloc::format!("HuMoment_{i}")));
        names.extend(zernike_indices().into_iter().map(|(n, m)| alloc::format!("Zernike_{n}_{m}")));
        names.extend(["InertiaTensor_0_0", "InertiaTensor_0_1", "InertiaTensor_1_0", "InertiaTensor_1_1"].map(String::from));
        names.extend(["InertiaTensorEigenvalues_0", "InertiaTensorEigenvalues_1"].map(String::from));
        names
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SHAPE_FEATURE_COUNT);
        v.extend_from_slice(&[
            self.area,
            self.bbox_area,
            self.convex_hull_area,
            self.perimeter,
            self.form_factor,
            self.compactness,
            self.eccentricity,
            self.equivalent_diameter,
            self.euler_number,
            self.major_axis_length,
            self.minor_axis_length,
            self.orientation,
            self.solidity,
            self.max_feret,
            self.min_feret,
            self.max_radius,
            self.mean_radius,
            self.median_radius,
            self.normalized_moment_1_1,
        ]);
        v.extend_from_slice(&self.hu_moments);
        v.extend_from_slice(&self.zernike);
        v.extend_from_slice(&self.inertia_tensor);
        v.extend_from_slice(&self.inertia_eigenvalues);
        v
    }
}

pub fn compute_shape_features(mask: &LabelMask, object_id: u32) -> Result<ShapeFeatures, FeatureError> {
    Ok(shape_features_of(&mask.object(object_id)?))
}

fn crofton_perimeter(crop: &Raster<bool>) -> f64 {
    let (w, h) = crop.dims();
    let (mut axial, mut diagonal) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            let here = crop.get(x, y);
            if x + 1 < w && here != crop.get(x + 1, y) {
                axial += 1;
            }
            if y + 1 < h && here != crop.get(x, y + 1) {
                axial += 1;
            }
            if x + 1 < w && y + 1 < h && here != crop.get(x + 1, y + 1) {
                diagonal += 1;
            }
            if x > 0 && y + 1 < h && here != crop.get(x - 1, y + 1) {
                diagonal += 1;
            }
        }
    }
    PI / 8.0 * (axial as f64 + diagonal as f64 / SQRT_2)
}

/// Euler number with 8-connected foreground, from 2×2 bit-quad counts.
fn euler_number(crop: &Raster<bool>) -> f64 {
    let (w, h) = crop.dims();
    let (mut q1, mut q3, mut qd) = (0i64, 0i64, 0i64);
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let a = crop.get(x, y);
            let b = crop.get(x + 1, y);
            let c = crop.get(x, y + 1);
            let d = crop.get(x + 1, y + 1);
            match [a, b, c, d].iter().filter(|&&v| v).count() {
                1 => q1 += 1,
                3 => q3 += 1,
                2 if a == d => qd += 1,
                _ => {}
            }
        }
    }
    ((q1 - q3 - 2 * qd) / 4) as f64
}

fn hu_moments(eta: impl Fn(usize, usize) -> f64) -> [f64; 7] {
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let a = n30 + n12;
    let b = n21 + n03;
    [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
    ]
}

/// Computes all 62 shape scalars from an object's pixel set.
///
/// Objects under 3 px report eccentricity and orientation as 0.
pub fn shape_features_of(obj: &ObjectPixels) -> ShapeFeatures {
    let b = obj.bbox;
    let n = obj.area() as f64;
    let rel: Vec<(usize, usize)> = obj.coords.iter().map(|&(x, y)| (x - b.min_x, y - b.min_y)).collect();
    let crop = obj.padded_crop();

    // Moments about the centroid.
    let cx = rel.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = rel.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let mu = |p: i32, q: i32| -> f64 {
        rel.iter().map(|&(x, y)| (x as f64 - cx).powi(p) * (y as f64 - cy).powi(q)).sum()
    };
    let (mu20, mu02, mu11) = (mu(2, 0), mu(0, 2), mu(1, 1));
    let eta = |p: usize, q: usize| -> f64 { mu(p as i32, q as i32) / n.powf(1.0 + (p + q) as f64 / 2.0) };
    let (cov_xx, cov_yy, cov_xy) = (mu20 / n, mu02 / n, mu11 / n);
    let half_trace = (cov_xx + cov_yy) / 2.0;
    let spread = ((cov_xx - cov_yy).powi(2) / 4.0 + cov_xy * cov_xy).sqrt();
    let lambda1 = half_trace + spread;
    let lambda2 = (half_trace - spread).max(0.0);

    let degenerate = obj.area() < 3;
    let eccentricity = if degenerate || lambda1 <= 0.0 { 0.0 } else { (1.0 - lambda2 / lambda1).max(0.0).sqrt() };
    let orientation = if degenerate {
        0.0
    } else {
        0.5 * (-2.0 * cov_xy).atan2(cov_xx - cov_yy) * 180.0 / PI
    };

    let points: Vec<Pt> = rel.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    let hull = convex_hull(&points);
    let mut convex_area = 0usize;
    for y in 0..b.height() as i64 {
        for x in 0..b.width() as i64 {
            if hull_contains(&hull, (x, y)) {
                convex_area += 1;
            }
        }
    }

    let perimeter = crofton_perimeter(&crop);
    let dist = squared_distance_to_background(&crop);
    let radii: Vec<f64> = rel.iter().map(|&(x, y)| dist.get(x + 1, y + 1).sqrt()).collect();

    ShapeFeatures {
        area: n,
        bbox_area: b.area() as f64,
        convex_hull_area: convex_area as f64,
        perimeter,
        form_factor: 4.0 * PI * n / (perimeter * perimeter),
        compactness: 2.0 * PI * (cov_xx + cov_yy) / n,
        eccentricity,
        equivalent_diameter: (4.0 * n / PI).sqrt(),
        euler_number: euler_number(&crop),
        major_axis_length: 4.0 * lambda1.sqrt(),
        minor_axis_length: 4.0 * lambda2.sqrt(),
        orientation,
        solidity: n / convex_area as f64,
        max_feret: max_caliper(&hull) + FERET_OFFSET,
        min_feret: min_caliper(&hull) + FERET_OFFSET,
        max_radius: radii.iter().copied().fold(0.0, f64::max),
        mean_radius: stats::mean(&radii),
        median_radius: stats::median(&radii),
        normalized_moment_1_1: eta(1, 1),
        hu_moments: hu_moments(eta),
        zernike: zernike_magnitudes(obj),
        inertia_tensor: [cov_yy, -cov_xy, -cov_xy, cov_xx],
        inertia_eigenvalues: [lambda1, lambda2],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectfeatures::ObjectKind;

    fn mask_of(w: usize, h: usize, inside: impl Fn(usize, usize) -> bool) -> LabelMask {
        LabelMask::new(Raster::from_fn(w, h, |x, y| u32::from(inside(x, y))), ObjectKind::Nucleus)
    }

    fn disk(r: f64) -> LabelMask {
        let size = (2.0 * r) as usize + 9;
        let c = size as f64 / 2.0;
        mask_of(size, size, |x, y| (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= r * r)
    }

    #[test]
    fn registry_has_62_names() {
        let names = ShapeFeatures::names();
        assert_eq!(names.len(), SHAPE_FEATURE_COUNT);
        let f = compute_shape_features(&disk(6.0), 1).unwrap();
        assert_eq!(f.to_vec().len(), SHAPE_FEATURE_COUNT);
    }

    #[test]
    fn filled_square() {
        let f = compute_shape_features(&mask_of(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y)), 1).unwrap();
        assert_eq!(f.area, 25.0);
        assert_eq!(f.bbox_area, 25.0);
        assert_eq!(f.convex_hull_area, 25.0);
        assert_eq!(f.solidity, 1.0);
        assert_eq!(f.euler_number, 1.0);
        assert_eq!(f.max_radius, 3.0);
        assert!(f.min_feret <= f.max_feret);
    }

    #[test]
    fn disk_is_round() {
        let f = compute_shape_features(&disk(50.0), 1).unwrap();
        assert!((f.form_factor - 1.0).abs() < 0.05, "form factor {}", f.form_factor);
        assert!(f.eccentricity < 0.1);
        assert!((f.compactness - 1.0).abs() < 0.02);
        assert!(f.solidity > 0.98);
    }

    #[test]
    fn holes_lower_the_euler_number() {
        let ring = mask_of(12, 12, |x, y| (2..10).contains(&x) && (2..10).contains(&y) && !((5..7).contains(&x) && (5..7).contains(&y)));
        assert_eq!(compute_shape_features(&ring, 1).unwrap().euler_number, 0.0);
    }

    #[test]
    fn single_pixel_is_finite() {
        let f = compute_shape_features(&mask_of(3, 3, |x, y| x == 1 && y == 1), 1).unwrap();
        assert!(f.to_vec().iter().all(|v| v.is_finite()));
        assert_eq!((f.eccentricity, f.orientation), (0.0, 0.0));
        assert_eq!(f.max_radius, 1.0);
    }

    #[test]
    fn orientation_follows_major_axis() {
        // Major axis along +x.
        let horiz = mask_of(30, 12, |x, y| ((x as f64 - 15.0) / 12.0).powi(2) + ((y as f64 - 6.0) / 4.0).powi(2) <= 1.0);
        assert!(compute_shape_features(&horiz, 1).unwrap().orientation.abs() < 1e-9);
        // Rising diagonal in y-up coordinates.
        let diag = mask_of(20, 20, |x, y| {
            let (u, v) = (x as f64 - 10.0, 10.0 - y as f64);
            ((u + v) / 12.0).powi(2) + ((u - v) / 4.0).powi(2) <= 1.0
        });
        let o = compute_shape_features(&diag, 1).unwrap().orientation;
        assert!((o - 45.0).abs() < 1.0, "orientation {o}");
    }
}
