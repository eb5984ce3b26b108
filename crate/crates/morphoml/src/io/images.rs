//! Core images and label masks on disk.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use morphoml_core::raster::RgbImage;
use morphoml_core::Raster;

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

/// Decodes a PNG or TIFF as 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Raster::from_vec(w, h, data).map_err(|e| Error::Internal(format!("{e:?}")))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = img.dims();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, img.data().iter().flatten().copied().collect())
            .ok_or_else(|| Error::Internal("image buffer size".into()))?;
    buf.save(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Reads a single-channel mask; 0 is background, any other value an object id.
pub fn read_label_mask(path: &Path) -> Result<Raster<u32>> {
    let img = image::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    if img.color().channel_count() != 1 {
        return Err(Error::data(format!("{}: label mask must be single-channel", path.display())));
    }
    let img = img.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| u32::from(p.0[0])).collect();
    Raster::from_vec(w, h, data).map_err(|e| Error::Internal(format!("{e:?}")))
}

/// Writes a 16-bit grayscale PNG. Ids above 65535 are refused.
pub fn write_label_mask(path: &Path, mask: &Raster<u32>) -> Result<()> {
    let (w, h) = mask.dims();
    let mut data = Vec::with_capacity(w * h);
    for &v in mask.data() {
        data.push(u16::try_from(v).map_err(|_| Error::data(format!("label {v} does not fit a 16-bit mask")))?);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, data).ok_or_else(|| Error::Internal("mask buffer size".into()))?;
    buf.save(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// `dir/<core_id>.<ext>` for the first supported extension that exists.
pub fn find_image(dir: &Path, core_id: &str) -> Result<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{core_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::data(format!("no png or tiff for core `{core_id}` in {}", dir.display())))
}
