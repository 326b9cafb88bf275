//! Non-differentiable raster operations: preprocessing, label engineering,
//! augmentation and PNG I/O.

mod distance;
mod filter;
mod geometry;
pub mod io;
mod morphology;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use distance::{edt, edt_grid, DistanceField};
pub use filter::{adaptive_median_filter, median_filter, median_kernel_side, standardize};
pub use geometry::{
    augment_expand, bilinear_resize, crop_centered, pad_to_square, resize_grid, resize_mask,
    rot90, vflip, zero_pad_to_square, Transform, AUGMENT_FACTOR,
};
pub use morphology::{dilate_disk, dilate_to_width, skeleton_length, thin};

/// Grayscale intensities in `[0, 1]` with their ground resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleImage {
    pub id: String,
    pub pixels: Array2<f32>,
    /// Meters per pixel.
    pub resolution_m: f64,
}

impl SampleImage {
    pub fn new(id: impl Into<String>, pixels: Array2<f32>, resolution_m: f64) -> Result<Self> {
        let id = id.into();
        if pixels.is_empty() {
            return Err(Error::invalid(format!("{id}: empty image")));
        }
        if !(resolution_m > 0.0 && resolution_m.is_finite()) {
            return Err(Error::invalid(format!(
                "{id}: resolution must be positive, got {resolution_m}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{id}: pixel values")));
        }
        Ok(SampleImage {
            id,
            pixels,
            resolution_m,
        })
    }

    /// `(height, width)`
    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Binary front label: 1 on the calving front, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontMask {
    pub id: String,
    pub pixels: Array2<u8>,
    pub resolution_m: f64,
}

impl FrontMask {
    pub fn new(id: impl Into<String>, pixels: Array2<u8>, resolution_m: f64) -> Result<Self> {
        let id = id.into();
        if pixels.is_empty() {
            return Err(Error::invalid(format!("{id}: empty mask")));
        }
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::invalid(format!("{id}: non-binary mask")));
        }
        Ok(FrontMask {
            id,
            pixels,
            resolution_m,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn foreground(&self) -> usize {
        count_foreground(&self.pixels)
    }
}

pub(crate) fn count_foreground(grid: &Array2<u8>) -> usize {
    grid.iter().filter(|&&v| v != 0).count()
}
