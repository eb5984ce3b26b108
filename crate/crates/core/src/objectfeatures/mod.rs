//! Per-object morphometry from integer label masks.
//!
//! Objects are measured from their pixel sets. Coordinates are taken relative
//! to each object's bounding box, so every translation-invariant feature is
//! bit-identical under integer translation.

mod arch;
mod edt;
mod hull;
mod intensity;
mod secondary;
mod shape;
mod zernike;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::raster::Raster;

pub use arch::{arch_features, ArchFeatures, ARCH_NAMES};
pub use edt::squared_distance_to_background;
pub use hull::{convex_hull, hull_contains};
pub use intensity::{compute_intensity_features, IntensityFeatures, INTENSITY_NAMES};
pub(crate) use intensity::intensity_of;
pub use secondary::derive_secondary_objects;
pub use shape::{compute_shape_features, shape_features_of, ShapeFeatures, SHAPE_FEATURE_COUNT};
pub use zernike::{zernike_indices, ZERNIKE_MAX_ORDER};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("object {0} is not present in the mask")]
    MissingObject(u32),
    #[error("channel is {channel:?} but mask is {mask:?}")]
    DimensionMismatch { channel: (usize, usize), mask: (usize, usize) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Nucleus,
    Cell,
    Cytoplasm,
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> usize {
        self.max_y - self.min_y + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }
}

/// Pixel set of one labelled object, in row-major scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPixels {
    pub id: u32,
    pub coords: Vec<(usize, usize)>,
    pub bbox: BBox,
}

impl ObjectPixels {
    pub fn area(&self) -> usize {
        self.coords.len()
    }

    /// Binary crop of the object, padded by one background pixel on each side.
    /// Pixel `(x, y)` of the object lands at `(x − min_x + 1, y − min_y + 1)`.
    pub fn padded_crop(&self) -> Raster<bool> {
        let mut crop = Raster::filled(self.bbox.width() + 2, self.bbox.height() + 2, false);
        for &(x, y) in &self.coords {
            crop.set(x - self.bbox.min_x + 1, y - self.bbox.min_y + 1, true);
        }
        crop
    }

    /// Pixel centroid in patch coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.coords.len() as f64;
        let (sx, sy) = self
            .coords
            .iter()
            .fold((0usize, 0usize), |(sx, sy), &(x, y)| (sx + x - self.bbox.min_x, sy + y - self.bbox.min_y));
        (self.bbox.min_x as f64 + sx as f64 / n, self.bbox.min_y as f64 + sy as f64 / n)
    }
}

/// Integer label raster; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub labels: Raster<u32>,
    pub kind: ObjectKind,
}

impl LabelMask {
    pub fn new(labels: Raster<u32>, kind: ObjectKind) -> Self {
        Self { labels, kind }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn object_ids(&self) -> Vec<u32> {
        self.objects().into_keys().collect()
    }

    /// All objects keyed by id, in ascending id order.
    pub fn objects(&self) -> BTreeMap<u32, ObjectPixels> {
        let mut out: BTreeMap<u32, ObjectPixels> = BTreeMap::new();
        let (w, h) = self.labels.dims();
        for y in 0..h {
            for x in 0..w {
                let id = self.labels.get(x, y);
                if id == 0 {
                    continue;
                }
                let obj = out.entry(id).or_insert_with(|| ObjectPixels {
                    id,
                    coords: Vec::new(),
                    bbox: BBox { min_x: x, min_y: y, max_x: x, max_y: y },
                });
                obj.coords.push((x, y));
                let b = &mut obj.bbox;
                b.min_x = b.min_x.min(x);
                b.max_x = b.max_x.max(x);
                b.max_y = b.max_y.max(y);
            }
        }
        out
    }

    pub fn object(&self, id: u32) -> Result<ObjectPixels, FeatureError> {
        if id == 0 {
            return Err(FeatureError::MissingObject(0));
        }
        let (w, h) = self.labels.dims();
        let mut coords = Vec::new();
        let mut bbox = BBox { min_x: usize::MAX, min_y: usize::MAX, max_x: 0, max_y: 0 };
        for y in 0..h {
            for x in 0..w {
                if self.labels.get(x, y) == id {
                    coords.push((x, y));
                    bbox.min_x = bbox.min_x.min(x);
                    bbox.min_y = bbox.min_y.min(y);
                    bbox.max_x = bbox.max_x.max(x);
                    bbox.max_y = bbox.max_y.max(y);
                }
            }
        }
        if coords.is_empty() {
            return Err(FeatureError::MissingObject(id));
        }
        Ok(ObjectPixels { id, coords, bbox })
    }

    /// Splits every label into its 8-connected components. The component
    /// containing the label's first pixel in scan order keeps the id; the
    /// others get fresh ids above the current maximum, in scan order.
    /// Returns the number of components that were relabelled.
    pub fn repair_connectivity(&mut self) -> usize {
        let (w, h) = self.labels.dims();
        let mut next = self.labels.data().iter().copied().max().unwrap_or(0);
        let mut seen = Raster::filled(w, h, false);
        let mut first_done: BTreeMap<u32, ()> = BTreeMap::new();
        let mut relabelled = 0;
        let mut stack = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let id = self.labels.get(x, y);
                if id == 0 || seen.get(x, y) {
                    continue;
                }
                let target = if first_done.insert(id, ()).is_none() {
                    id
                } else {
                    next += 1;
                    relabelled += 1;
                    next
                };
                seen.set(x, y, true);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    self.labels.set(cx, cy, target);
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                            if self.labels.get_signed(nx, ny) == Some(id) && !seen.get(nx as usize, ny as usize) {
                                seen.set(nx as usize, ny as usize, true);
                                stack.push((nx as usize, ny as usize));
                            }
                        }
                    }
                }
            }
        }
        relabelled
    }
}

/// 8-neighbourhood offsets.
pub(crate) const NEIGHBOURS8: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objects_are_collected_with_bboxes() {
        let labels = Raster::from_fn(6, 5, |x, y| if (1..=3).contains(&x) && (2..=3).contains(&y) { 4 } else if x == 5 { 9 } else { 0 });
        let mask = LabelMask::new(labels, ObjectKind::Nucleus);
        let objs = mask.objects();
        assert_eq!(objs.keys().copied().collect::<Vec<_>>(), [4, 9]);
        assert_eq!(objs[&4].bbox, BBox { min_x: 1, min_y: 2, max_x: 3, max_y: 3 });
        assert_eq!(objs[&4].area(), 6);
        assert_eq!(mask.object(4).unwrap(), objs[&4]);
        assert_eq!(mask.object(7), Err(FeatureError::MissingObject(7)));
    }

    #[test]
    fn disconnected_label_is_split() {
        let labels = Raster::from_fn(7, 3, |x, _| if matches!(x, 0 | 1 | 5) { 2 } else { 0 });
        let mut mask = LabelMask::new(labels, ObjectKind::Nucleus);
        assert_eq!(mask.repair_connectivity(), 1);
        assert_eq!(mask.object_ids(), [2, 3]);
        assert_eq!(mask.object(3).unwrap().area(), 3);
        // Diagonal contact counts as connected.
        let diag = Raster::from_fn(3, 3, |x, y| u32::from(x == y));
        let mut mask = LabelMask::new(diag, ObjectKind::Nucleus);
        assert_eq!(mask.repair_connectivity(), 0);
    }
}
