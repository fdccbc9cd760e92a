//! Grayscale PNG and PGM images, 8 or 16 bits per pixel.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::model::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Reads a grayscale image and divides by the bit-depth maximum.
pub fn load_grayscale(path: &Path) -> Result<Grid<f64>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::format(path, None, e.to_string()))?
        .with_guessed_format()
        .map_err(|e| Error::format(path, None, e.to_string()))?
        .decode()
        .map_err(|e| Error::format(path, None, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        other => {
            return Err(Error::format(
                path,
                None,
                format!("expected an 8- or 16-bit grayscale image, got {:?}", other.color()),
            ))
        }
    };
    Grid::from_vec(h, w, data)
}

/// Writes intensities in `[0, 1]` rounded to the given depth. The format
/// follows the extension (`.png`, `.pgm`).
pub fn save_grayscale(pixels: &Grid<f64>, path: &Path, depth: BitDepth) -> Result<()> {
    let format = ImageFormat::from_path(path).map_err(|e| Error::format(path, None, e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::format(path, None, "only .png and .pgm images are supported"));
    }
    let (h, w) = pixels.shape();
    let scale = |v: f64| (v.clamp(0.0, 1.0) * depth.max_value()).round();
    let img = match depth {
        BitDepth::Eight => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, pixels.as_slice().iter().map(|&v| scale(v) as u8).collect())
                .expect("buffer matches dimensions"),
        ),
        BitDepth::Sixteen => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w as u32,
                h as u32,
                pixels.as_slice().iter().map(|&v| scale(v) as u16).collect(),
            )
            .expect("buffer matches dimensions"),
        ),
    };
    img.save_with_format(path, format)?;
    Ok(())
}
