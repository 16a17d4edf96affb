//! 8-bit RGB PNG reading and writing.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Reads a PNG as RGB in `[0, 1]`. Alpha is dropped with a warning.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let dynamic = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    if dynamic.color().has_alpha() {
        log::warn!("{}: alpha channel stripped", path.display());
    }
    if !matches!(
        dynamic.color(),
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8
    ) {
        log::warn!(
            "{}: converted from {:?} to 8-bit RGB",
            path.display(),
            dynamic.color()
        );
    }
    Ok(from_rgb8(&dynamic.to_rgb8()))
}

pub fn from_rgb8(rgb: &RgbImage) -> Image {
    let (w, h) = rgb.dimensions();
    Image::from_fn(h as usize, w as usize, |c, y, x| {
        rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

/// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
pub fn to_rgb8(image: &Image) -> RgbImage {
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            (image.get(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    })
}

pub fn write_png(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    DynamicImage::ImageRgb8(to_rgb8(image))
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}
