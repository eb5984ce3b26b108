//! Core tiling, background filtering and H&E stain separation.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use crate::prelude::*;
use serde::{Deserialize, Serialize};

use crate::raster::{Channel, Raster, Rgb, RgbImage};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocessError {
    #[error("grid size {0} is not a positive perfect square")]
    NotPerfectSquare(usize),
    #[error("core of {width}x{height} px cannot be divided into a {side}x{side} grid")]
    CoreTooSmall { width: usize, height: usize, side: usize },
    #[error("core image is empty")]
    EmptyCore,
    #[error("microns per pixel must be positive, got {0}")]
    BadResolution(f64),
    #[error("stain matrix is singular")]
    SingularStainMatrix,
}

pub const DEFAULT_MICRONS_PER_PIXEL: f64 = 0.25;
/// Patches per core in the default pipeline (2×2 grid).
pub const DEFAULT_GRID_N: usize = 4;
/// A pixel is background when its HSV saturation is below this.
pub const BACKGROUND_SATURATION: f64 = 0.05;
/// A patch is dropped when more than this fraction of pixels is background.
pub const BACKGROUND_PATCH_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct CoreImage {
    pub core_id: String,
    pub pixels: RgbImage,
    pub microns_per_pixel: f64,
}

impl CoreImage {
    pub fn new(core_id: impl Into<String>, pixels: RgbImage) -> Result<Self, PreprocessError> {
        Self::with_resolution(core_id, pixels, DEFAULT_MICRONS_PER_PIXEL)
    }

    pub fn with_resolution(
        core_id: impl Into<String>,
        pixels: RgbImage,
        microns_per_pixel: f64,
    ) -> Result<Self, PreprocessError> {
        if pixels.width() == 0 || pixels.height() == 0 {
            return Err(PreprocessError::EmptyCore);
        }
        if !(microns_per_pixel > 0.0 && microns_per_pixel.is_finite()) {
            return Err(PreprocessError::BadResolution(microns_per_pixel));
        }
        Ok(Self { core_id: core_id.into(), pixels, microns_per_pixel })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchKey {
    pub case_id: String,
    pub core_id: String,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub key: PatchKey,
    /// Top-left corner within the core.
    pub origin: (usize, usize),
    pub pixels: RgbImage,
}

/// Side length of a square grid of `grid_n` cells.
pub fn grid_side(grid_n: usize) -> Result<usize, PreprocessError> {
    let side = (grid_n as f64).sqrt().round() as usize;
    if grid_n == 0 || side * side != grid_n {
        return Err(PreprocessError::NotPerfectSquare(grid_n));
    }
    Ok(side)
}

/// Splits a core into a `√grid_n × √grid_n` grid in row-major order. Patch
/// sizes use integer division; the last row and column absorb the remainder.
pub fn extract_patch_grid(
    case_id: &str,
    core: &CoreImage,
    grid_n: usize,
) -> Result<Vec<Patch>, PreprocessError> {
    let side = grid_side(grid_n)?;
    let (w, h) = core.pixels.dims();
    let (cell_w, cell_h) = (w / side, h / side);
    if cell_w == 0 || cell_h == 0 {
        return Err(PreprocessError::CoreTooSmall { width: w, height: h, side });
    }
    let mut patches = Vec::with_capacity(grid_n);
    for row in 0..side {
        for col in 0..side {
            let (x0, y0) = (col * cell_w, row * cell_h);
            let pw = if col + 1 == side { w - x0 } else { cell_w };
            let ph = if row + 1 == side { h - y0 } else { cell_h };
            patches.push(Patch {
                key: PatchKey { case_id: case_id.into(), core_id: core.core_id.clone(), row, col },
                origin: (x0, y0),
                pixels: core.pixels.crop(x0, y0, pw, ph),
            });
        }
    }
    Ok(patches)
}

/// HSV saturation of an sRGB pixel, no gamma linearisation.
pub fn saturation([r, g, b]: Rgb) -> f64 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == 0 {
        0.0
    } else {
        f64::from(max - min) / f64::from(max)
    }
}

pub fn background_fraction(pixels: &RgbImage) -> f64 {
    let n = pixels.data().len();
    if n == 0 {
        return 1.0;
    }
    let bg = pixels.data().iter().filter(|&&p| saturation(p) < BACKGROUND_SATURATION).count();
    bg as f64 / n as f64
}

pub fn is_background(pixels: &RgbImage) -> bool {
    background_fraction(pixels) > BACKGROUND_PATCH_FRACTION
}

/// Luminance in `[0, 1]`.
pub fn gray([r, g, b]: Rgb) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}

/// Unit-norm optical-density vectors, one row per stain: hematoxylin,
/// eosin, residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainMatrix {
    pub rows: [[f64; 3]; 3],
    /// Floor on normalised intensity `I/255` before the log transform.
    pub epsilon: f64,
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::from_stains([0.650, 0.704, 0.286], [0.072, 0.990, 0.105])
    }
}

impl StainMatrix {
    /// Builds the matrix from hematoxylin and eosin OD vectors; the residual
    /// row is their normalised cross product.
    pub fn from_stains(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Self {
        let h = normalize(hematoxylin);
        let e = normalize(eosin);
        let r = normalize(cross(h, e));
        Self { rows: [h, e, r], epsilon: 1.0 / 255.0 }
    }

    pub fn inverse(&self) -> Result<[[f64; 3]; 3], PreprocessError> {
        let m = self.rows;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(PreprocessError::SingularStainMatrix);
        }
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let (a, b) = ((j + 1) % 3, (j + 2) % 3);
                let (c, d) = ((i + 1) % 3, (i + 2) % 3);
                *cell = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
            }
        }
        Ok(inv)
    }

    /// Optical density `−log10(max(I/255, ε))` of one channel intensity on
    /// the 0–255 scale.
    pub fn optical_density(&self, intensity: f64) -> f64 {
        -(intensity / 255.0).max(self.epsilon).log10()
    }

    /// Forward model: intensities `255·10^(−cᵀM)` for stain concentrations `c`.
    pub fn synthesize(&self, concentrations: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let od: f64 = (0..3).map(|s| concentrations[s] * self.rows[s][ch]).sum();
            *o = 255.0 * 10f64.powf(-od);
        }
        out
    }
}

/// Per-pixel stain concentrations, negatives clamped to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StainChannels {
    pub hematoxylin: Channel,
    pub eosin: Channel,
    pub residual: Channel,
}

/// Deconvolves real-valued intensities; returns `[h, e, residual]`.
pub fn deconvolve_pixel(inverse: &[[f64; 3]; 3], stains: &StainMatrix, rgb: [f64; 3]) -> [f64; 3] {
    let od = rgb.map(|v| stains.optical_density(v));
    let mut c = [0.0; 3];
    for (s, cs) in c.iter_mut().enumerate() {
        let v: f64 = (0..3).map(|ch| od[ch] * inverse[ch][s]).sum();
        *cs = if v > 0.0 { v } else { 0.0 };
    }
    c
}

pub fn deconvolve_stains(pixels: &RgbImage, stains: &StainMatrix) -> Result<StainChannels, PreprocessError> {
    let inverse = stains.inverse()?;
    let (w, h) = pixels.dims();
    let mut hem = Raster::filled(w, h, 0.0);
    let mut eos = Raster::filled(w, h, 0.0);
    let mut res = Raster::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let p = pixels.get(x, y).map(f64::from);
            let [ch, ce, cr] = deconvolve_pixel(&inverse, stains, p);
            hem.set(x, y, ch);
            eos.set(x, y, ce);
            res.set(x, y, cr);
        }
    }
    Ok(StainChannels { hematoxylin: hem, eosin: eos, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(w: usize, h: usize) -> CoreImage {
        let px = Raster::from_fn(w, h, |x, y| [(x % 256) as u8, (y % 256) as u8, 7]);
        CoreImage::new("K1", px).unwrap()
    }

    #[test]
    fn hundred_px_core_into_four() {
        let patches = extract_patch_grid("C1", &core(100, 100), 4).unwrap();
        let idx: Vec<_> = patches.iter().map(|p| (p.key.row, p.key.col, p.pixels.dims())).collect();
        assert_eq!(idx, [(0, 0, (50, 50)), (0, 1, (50, 50)), (1, 0, (50, 50)), (1, 1, (50, 50))]);
    }

    #[test]
    fn single_cell_grid_is_identity() {
        let c = core(37, 23);
        let patches = extract_patch_grid("C1", &c, 1).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].pixels, c.pixels);
    }

    #[test]
    fn remainder_pixels_go_to_last_row_and_column() {
        let c = core(103, 101);
        let patches = extract_patch_grid("C1", &c, 9).unwrap();
        let mut covered = Raster::filled(103, 101, 0u8);
        for p in &patches {
            let (w, h) = p.pixels.dims();
            for y in 0..h {
                for x in 0..w {
                    let (cx, cy) = (p.origin.0 + x, p.origin.1 + y);
                    assert_eq!(p.pixels.get(x, y), c.pixels.get(cx, cy));
                    covered.set(cx, cy, covered.get(cx, cy) + 1);
                }
            }
        }
        assert!(covered.data().iter().all(|&n| n == 1));
        assert_eq!(patches[8].pixels.dims(), (35, 35));
    }

    #[test]
    fn grid_errors() {
        assert_eq!(extract_patch_grid("C", &core(10, 10), 3), Err(PreprocessError::NotPerfectSquare(3)));
        assert!(matches!(extract_patch_grid("C", &core(2, 2), 9), Err(PreprocessError::CoreTooSmall { .. })));
        assert!(CoreImage::new("x", Raster::filled(0, 3, [0; 3])).is_err());
    }

    #[test]
    fn background_examples() {
        let white = Raster::filled(10, 10, [255u8, 255, 255]);
        assert_eq!(background_fraction(&white), 1.0);
        assert!(is_background(&white));
        let red = Raster::filled(10, 10, [255u8, 0, 0]);
        assert_eq!(background_fraction(&red), 0.0);
        assert!(!is_background(&red));
        let mixed = Raster::from_fn(10, 10, |x, y| if y * 10 + x < 96 { [255, 255, 255] } else { [200, 40, 120] });
        assert!((background_fraction(&mixed) - 0.96).abs() < 1e-12);
        assert!(is_background(&mixed));
    }

    #[test]
    fn white_pixel_has_no_stain() {
        let s = StainMatrix::default();
        let c = deconvolve_pixel(&s.inverse().unwrap(), &s, [255.0; 3]);
        assert_eq!((c[0], c[1]), (0.0, 0.0));
    }

    #[test]
    fn stain_rows_are_unit_norm() {
        for row in StainMatrix::default().rows {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
