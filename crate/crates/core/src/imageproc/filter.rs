use ndarray::Array2;

use super::SampleImage;
use crate::error::{Error, Result};

/// Ground footprint of the speckle filter: a square of 2500 m², i.e. 50 m per side.
const MEDIAN_FOOTPRINT_M: f64 = 50.0;

/// Side of the square median kernel covering the footprint at `resolution_m`:
/// `max(3, next odd ≥ round(50 / resolution))`.
pub fn median_kernel_side(resolution_m: f64) -> Result<usize> {
    if !(resolution_m > 0.0 && resolution_m.is_finite()) {
        return Err(Error::invalid(format!(
            "resolution must be positive, got {resolution_m}"
        )));
    }
    let side = (MEDIAN_FOOTPRINT_M / resolution_m).round() as usize;
    let odd = if side.is_multiple_of(2) { side + 1 } else { side };
    Ok(odd.max(3))
}

/// Square median filter with clamped (replicated) borders.
pub fn median_filter(grid: &Array2<f32>, side: usize) -> Array2<f32> {
    let (h, w) = grid.dim();
    let r = (side / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut window = Vec::with_capacity(side * side);
    Array2::from_shape_fn((h, w), |(y, x)| {
        window.clear();
        for dy in -r..=r {
            let yy = clamp(y as isize + dy, h);
            for dx in -r..=r {
                window.push(grid[[yy, clamp(x as isize + dx, w)]]);
            }
        }
        let mid = window.len() / 2;
        *window.select_nth_unstable_by(mid, f32::total_cmp).1
    })
}

/// Median filter sized to the image's ground resolution.
pub fn adaptive_median_filter(img: &SampleImage) -> Result<SampleImage> {
    let side = median_kernel_side(img.resolution_m)?;
    Ok(SampleImage {
        id: img.id.clone(),
        pixels: median_filter(&img.pixels, side),
        resolution_m: img.resolution_m,
    })
}

/// Z-score the intensities, clip to ±3σ and map affinely onto `[0, 1]`.
/// A constant image maps to 0.5 everywhere.
pub fn standardize(img: &SampleImage) -> SampleImage {
    let n = img.pixels.len() as f64;
    let mean = img.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = img
        .pixels
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let pixels = img.pixels.mapv(|v| {
        let z = if std > 0.0 {
            ((f64::from(v) - mean) / std).clamp(-3.0, 3.0)
        } else {
            0.0
        };
        ((z + 3.0) / 6.0) as f32
    });
    SampleImage {
        id: img.id.clone(),
        pixels,
        resolution_m: img.resolution_m,
    }
}
