//! Cell and cytoplasm objects grown from nuclei.

use alloc::vec::Vec;

use super::intensity::is_edge;
use super::{LabelMask, ObjectKind};
use crate::raster::Raster;

/// Distance-limited Voronoi growth. Every background pixel within
/// `expansion_px` (Euclidean, pixel centres) of some nucleus joins the cell of
/// its nearest nucleus; equidistant pixels go to the lower nucleus id.
/// Cytoplasm is the cell minus its nucleus.
pub fn derive_secondary_objects(nuclei: &LabelMask, expansion_px: u32) -> (LabelMask, LabelMask) {
    let (w, h) = nuclei.dims();
    let labels = &nuclei.labels;
    let mut best: Raster<(u64, u32)> = Raster::filled(w, h, (u64::MAX, 0));
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(x, y);
            if id != 0 {
                best.set(x, y, (0, id));
            }
        }
    }

    let e = i64::from(expansion_px);
    let offsets: Vec<(i64, i64, u64)> = (-e..=e)
        .flat_map(|dy| (-e..=e).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| (dx != 0 || dy != 0) && dx * dx + dy * dy <= e * e)
        .map(|(dx, dy)| (dx, dy, (dx * dx + dy * dy) as u64))
        .collect();

    // The nearest pixel of a nucleus to any outside point is on its boundary.
    for y in 0..h {
        for x in 0..w {
            let id = labels.get(x, y);
            if id == 0 || !is_edge(labels, x, y, id) {
                continue;
            }
            for &(dx, dy, d2) in &offsets {
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
                    continue;
                }
                let (tx, ty) = (tx as usize, ty as usize);
                if labels.get(tx, ty) != 0 {
                    continue;
                }
                if (d2, id) < best.get(tx, ty) {
                    best.set(tx, ty, (d2, id));
                }
            }
        }
    }

    let cells = best.map(|(_, id)| id);
    let cytoplasm = Raster::from_fn(w, h, |x, y| if labels.get(x, y) == 0 { cells.get(x, y) } else { 0 });
    (LabelMask::new(cells, ObjectKind::Cell), LabelMask::new(cytoplasm, ObjectKind::Cytoplasm))
}
