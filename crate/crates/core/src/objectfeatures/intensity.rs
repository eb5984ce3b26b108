use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, LabelMask, ObjectPixels, NEIGHBOURS8};
use crate::raster::{Channel, Raster};
use crate::stats;

pub const INTENSITY_NAMES: [&str; 15] = [
    "IntegratedIntensity",
    "IntegratedIntensityEdge",
    "MeanIntensity",
    "MeanIntensityEdge",
    "MedianIntensity",
    "MinIntensity",
    "MinIntensityEdge",
    "MaxIntensity",
    "MaxIntensityEdge",
    "StdIntensity",
    "StdIntensityEdge",
    "MADIntensity",
    "LowerQuartileIntensity",
    "UpperQuartileIntensity",
    "MassDisplacement",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityFeatures {
    pub integrated: f64,
    pub integrated_edge: f64,
    pub mean: f64,
    pub mean_edge: f64,
    pub median: f64,
    pub min: f64,
    pub min_edge: f64,
    pub max: f64,
    pub max_edge: f64,
    pub std: f64,
    pub std_edge: f64,
    pub mad: f64,
    pub lower_quartile: f64,
    pub upper_quartile: f64,
    pub mass_displacement: f64,
}

impl IntensityFeatures {
    pub fn to_array(&self) -> [f64; 15] {
        [
            self.integrated,
            self.integrated_edge,
            self.mean,
            self.mean_edge,
            self.median,
            self.min,
            self.min_edge,
            self.max,
            self.max_edge,
            self.std,
            self.std_edge,
            self.mad,
            self.lower_quartile,
            self.upper_quartile,
            self.mass_displacement,
        ]
    }
}

pub fn compute_intensity_features(
    channel: &Channel,
    mask: &LabelMask,
    object_id: u32,
) -> Result<IntensityFeatures, FeatureError> {
    if channel.dims() != mask.dims() {
        return Err(FeatureError::DimensionMismatch { channel: channel.dims(), mask: mask.dims() });
    }
    let obj = mask.object(object_id)?;
    Ok(intensity_of(channel, &mask.labels, &obj))
}

/// Object pixels with at least one 8-neighbour outside the object (or
/// outside the image).
pub(crate) fn is_edge(labels: &Raster<u32>, x: usize, y: usize, id: u32) -> bool {
    NEIGHBOURS8
        .iter()
        .any(|&(dx, dy)| labels.get_signed(x as isize + dx, y as isize + dy) != Some(id))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub(crate) fn intensity_of(channel: &Channel, labels: &Raster<u32>, obj: &ObjectPixels) -> IntensityFeatures {
    let values: Vec<f64> = obj.coords.iter().map(|&(x, y)| channel.get(x, y)).collect();
    let edge: Vec<f64> = obj
        .coords
        .iter()
        .filter(|&&(x, y)| is_edge(labels, x, y, obj.id))
        .map(|&(x, y)| channel.get(x, y))
        .collect();
    let sorted = stats::sorted(&values);
    let (min, max) = min_max(&values);
    let (min_edge, max_edge) = if edge.is_empty() { (0.0, 0.0) } else { min_max(&edge) };

    let n = values.len() as f64;
    let total: f64 = values.iter().sum();
    let mass_displacement = if total > 0.0 {
        let b = obj.bbox;
        let (mut bx, mut by, mut wx, mut wy) = (0.0, 0.0, 0.0, 0.0);
        for (&(x, y), &v) in obj.coords.iter().zip(&values) {
            let (rx, ry) = ((x - b.min_x) as f64, (y - b.min_y) as f64);
            bx += rx;
            by += ry;
            wx += rx * v;
            wy += ry * v;
        }
        let (dx, dy) = (wx / total - bx / n, wy / total - by / n);
        (dx * dx + dy * dy).sqrt()
    } else {
        0.0
    };

    IntensityFeatures {
        integrated: total,
        integrated_edge: edge.iter().sum(),
        mean: total / n,
        mean_edge: stats::mean(&edge),
        median: stats::quantile_sorted(&sorted, 0.5),
        min,
        min_edge,
        max,
        max_edge,
        std: stats::std_dev(&values),
        std_edge: stats::std_dev(&edge),
        mad: stats::mad(&values),
        lower_quartile: stats::quantile_sorted(&sorted, 0.25),
        upper_quartile: stats::quantile_sorted(&sorted, 0.75),
        mass_displacement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectfeatures::ObjectKind;

    fn block_mask() -> LabelMask {
        LabelMask::new(Raster::from_fn(6, 6, |x, y| u32::from((1..5).contains(&x) && (1..5).contains(&y)) * 3), ObjectKind::Nucleus)
    }

    #[test]
    fn constant_object() {
        let ch = Raster::filled(6, 6, 0.4);
        let f = compute_intensity_features(&ch, &block_mask(), 3).unwrap();
        assert!((f.mean - 0.4).abs() < 1e-15);
        assert!(f.std < 1e-12 && f.mad < 1e-12 && f.mass_displacement < 1e-12);
        assert!((f.integrated - 6.4).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_object() {
        let mask = LabelMask::new(Raster::from_fn(3, 3, |x, y| u32::from(x == 2 && y == 0)), ObjectKind::Nucleus);
        let ch = Raster::from_fn(3, 3, |x, y| (x + 3 * y) as f64 * 0.1);
        let f = compute_intensity_features(&ch, &mask, 1).unwrap();
        let v = 0.2;
        for got in [f.integrated, f.mean, f.median, f.min, f.max, f.integrated_edge, f.mean_edge, f.min_edge, f.max_edge] {
            assert_eq!(got, v);
        }
    }

    #[test]
    fn two_valued_object() {
        // Left half 0.2, right half 0.8 over a 4x4 block.
        let ch = Raster::from_fn(6, 6, |x, _| if x < 3 { 0.2 } else { 0.8 });
        let f = compute_intensity_features(&ch, &block_mask(), 3).unwrap();
        assert!((f.mean - 0.5).abs() < 1e-12);
        assert!((f.mad - 0.3).abs() < 1e-12);
        assert_eq!(f.lower_quartile, 0.2);
        assert_eq!(f.upper_quartile, 0.8);
        assert!(f.min <= f.median && f.median <= f.max);
        assert!(f.mass_displacement > 0.0);
    }

    #[test]
    fn edge_excludes_interior() {
        let ch = Raster::from_fn(6, 6, |x, y| if (2..4).contains(&x) && (2..4).contains(&y) { 1.0 } else { 0.0 });
        let f = compute_intensity_features(&ch, &block_mask(), 3).unwrap();
        assert_eq!(f.max_edge, 0.0);
        assert_eq!(f.max, 1.0);
    }

    #[test]
    fn errors() {
        let ch = Raster::filled(5, 6, 0.0);
        assert!(matches!(compute_intensity_features(&ch, &block_mask(), 3), Err(FeatureError::DimensionMismatch { .. })));
        let ch = Raster::filled(6, 6, 0.0);
        assert_eq!(compute_intensity_features(&ch, &block_mask(), 1), Err(FeatureError::MissingObject(1)));
    }
}
