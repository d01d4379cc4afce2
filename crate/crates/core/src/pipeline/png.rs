use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::volume::{get_slice, Orientation, Volume};

/// 8-bit gray level of `value` windowed to `[0, peak]`.
pub fn quantize(value: f64, peak: f64) -> u8 {
    if peak <= 0.0 {
        return 0;
    }
    ((value / peak).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes one slice as an 8-bit grayscale PNG windowed to `[0, max(v)]`.
///
/// Image columns follow the slice's first plane axis and rows its second,
/// flipped so that the second axis increases upwards.
pub fn export_png(v: &Volume, o: Orientation, index: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let slice = get_slice(v, o, index)?.data;
    let peak = v.max();
    let (w, h) = slice.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(slice[[x as usize, h - 1 - y as usize]], peak)])
    });
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    })
}
