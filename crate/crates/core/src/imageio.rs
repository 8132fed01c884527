//! Conversions between [`ImageBuffer`] and encoded PNG/JPEG files.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

use crate::domain::{DomainError, ImageBuffer};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Codec(#[from] image::ImageError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub fn from_dynamic(img: DynamicImage) -> Result<ImageBuffer, DomainError> {
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            ImageBuffer::new(w, h, 1, g.into_raw())
        }
        other => {
            let rgb = other.into_rgb8();
            let (w, h) = rgb.dimensions();
            ImageBuffer::new(w, h, 3, rgb.into_raw())
        }
    }
}

pub fn to_dynamic(img: &ImageBuffer) -> DynamicImage {
    let (w, h) = img.dims();
    let data = img.data().to_vec();
    match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, data).expect("length checked at construction")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, data).expect("length checked at construction")),
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    let img = image::open(path).map_err(|source| ImageIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ok(from_dynamic(img)?)
}

pub fn decode(bytes: &[u8]) -> Result<ImageBuffer, ImageIoError> {
    Ok(from_dynamic(image::load_from_memory(bytes)?)?)
}

/// Lossless PNG; format chosen from the extension when writing files.
pub fn write_image(img: &ImageBuffer, path: &Path) -> Result<(), ImageIoError> {
    to_dynamic(img).save(path).map_err(|source| ImageIoError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(img).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_jpeg(img: &ImageBuffer) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(img).write_to(&mut out, ImageFormat::Jpeg)?;
    Ok(out.into_inner())
}
