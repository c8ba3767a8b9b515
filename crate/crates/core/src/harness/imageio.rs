//! PNG and binary PGM/PPM reading and writing.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

/// Loads an RGB image as `(1, 3, H, W)` with values `v / 255 - 0.5`, matching
/// the synthetic data range.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0 - 0.5
    }))
}

/// Inverse of [`read_image`] for the first batch item.
pub fn write_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    let s = t.shape();
    if s.c != 3 {
        return Err(image_err(path, format!("expected 3 channels, got {s}")));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| {
            ((t.at(0, c, y as usize, x as usize) + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
        }))
    });
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_gray(path: impl AsRef<Path>, w: usize, h: usize, pixels: Vec<u8>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).ok_or_else(|| image_err(path, "pixel count mismatch"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.pixels().map(|p: &Luma<u8>| p[0]).collect()))
}
