//! Grayscale PNG reading and writing.
//!
//! Images may be 8- or 16-bit; intensities come back scaled to `[0, 1]`.
//! Masks store the front as 255 (1 is accepted on read) and background as 0.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn save<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })
}

/// `(height, width)` from the file header.
pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((h as usize, w as usize))
}

pub fn read_gray(path: &Path) -> Result<Array2<f32>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect(),
        other => other
            .into_luma16()
            .into_raw()
            .into_iter()
            .map(|v| f32::from(v) / 65535.0)
            .collect(),
    };
    Ok(Array2::from_shape_vec((h, w), data).expect("decoded buffer matches header"))
}

fn to_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write `[0, 1]` intensities as 16-bit grayscale.
pub fn write_gray16(path: &Path, grid: &Array2<f32>) -> Result<()> {
    let (h, w) = grid.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, grid.iter().map(|&v| to_u16(v)).collect())
            .expect("buffer sized from grid");
    save(path, &buf)
}

/// Write `[0, 1]` intensities as 8-bit grayscale (×255).
pub fn write_gray8(path: &Path, grid: &Array2<f32>) -> Result<()> {
    let (h, w) = grid.dim();
    let buf = GrayImage::from_raw(w as u32, h as u32, grid.iter().map(|&v| to_u8(v)).collect())
        .expect("buffer sized from grid");
    save(path, &buf)
}

/// Outcome of decoding a mask file: either `{0,1}` cells or the offending value.
pub fn read_mask(path: &Path) -> Result<std::result::Result<Array2<u8>, u16>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u16> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| if v == u16::MAX { 255 } else { v })
            .collect(),
        other => other.into_luma8().into_raw().into_iter().map(u16::from).collect(),
    };
    if let Some(&bad) = raw.iter().find(|&&v| !matches!(v, 0 | 1 | 255)) {
        return Ok(Err(bad));
    }
    let cells = raw.into_iter().map(|v| u8::from(v != 0)).collect();
    Ok(Ok(Array2::from_shape_vec((h, w), cells).expect("decoded buffer matches header")))
}

pub fn write_mask(path: &Path, grid: &Array2<u8>) -> Result<()> {
    let (h, w) = grid.dim();
    let buf = GrayImage::from_raw(
        w as u32,
        h as u32,
        grid.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
    )
    .expect("buffer sized from grid");
    save(path, &buf)
}

/// Write an RGB image from `(r, g, b)` triples in row-major order.
pub fn write_rgb(path: &Path, h: usize, w: usize, pixels: Vec<[u8; 3]>) -> Result<()> {
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, pixels.into_iter().flatten().collect())
            .expect("buffer sized from grid");
    save(path, &buf)
}
