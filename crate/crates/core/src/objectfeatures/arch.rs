//! Positional (architectural) descriptors in patch-local pixel coordinates.

use serde::{Deserialize, Serialize};

use super::ObjectPixels;

pub const ARCH_NAMES: [&str; 13] = [
    "Nuclei_BoundingBoxMinimum_X",
    "Nuclei_BoundingBoxMinimum_Y",
    "Nuclei_BoundingBoxMaximum_X",
    "Nuclei_BoundingBoxMaximum_Y",
    "Nuclei_Center_X",
    "Nuclei_Center_Y",
    "Cells_BoundingBoxMinimum_X",
    "Cells_BoundingBoxMinimum_Y",
    "Cells_BoundingBoxMaximum_X",
    "Cells_BoundingBoxMaximum_Y",
    "Cells_Center_X",
    "Cells_Center_Y",
    "Nuclei_NearestNeighbourDistance",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchFeatures {
    pub values: [f64; 13],
}

/// `nearest_neighbour` is the centroid distance to the closest other nucleus
/// in the patch, 0 when the nucleus is alone. Without a cell object the
/// nucleus stands in for it.
pub fn arch_features(nucleus: &ObjectPixels, cell: Option<&ObjectPixels>, nearest_neighbour: f64) -> ArchFeatures {
    let cell = cell.unwrap_or(nucleus);
    let (ncx, ncy) = nucleus.centroid();
    let (ccx, ccy) = cell.centroid();
    let nb = nucleus.bbox;
    let cb = cell.bbox;
    ArchFeatures {
        values: [
            nb.min_x as f64,
            nb.min_y as f64,
            nb.max_x as f64,
            nb.max_y as f64,
            ncx,
            ncy,
            cb.min_x as f64,
            cb.min_y as f64,
            cb.max_x as f64,
            cb.max_y as f64,
            ccx,
            ccy,
            nearest_neighbour,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectfeatures::{LabelMask, ObjectKind};
    use crate::raster::Raster;

    #[test]
    fn centre_inside_bbox() {
        let mask = LabelMask::new(Raster::from_fn(10, 8, |x, y| u32::from((2..=6).contains(&x) && (3..5).contains(&y))), ObjectKind::Nucleus);
        let obj = mask.object(1).unwrap();
        let a = arch_features(&obj, None, 0.0);
        assert_eq!(&a.values[..4], &[2.0, 3.0, 6.0, 4.0]);
        assert_eq!((a.values[4], a.values[5]), (4.0, 3.5));
        assert!(a.values[0] <= a.values[4] && a.values[4] <= a.values[2]);
    }
}
