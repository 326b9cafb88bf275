use ndarray::{s, Array2};

use super::{FrontMask, SampleImage};
use crate::error::{Error, Result};
use crate::tensor::resample_axis;

/// Zero-pad to a square of side `max(H, W)`, content centered; an odd
/// surplus puts the extra row/column at the bottom/right.
pub fn pad_to_square<T: Copy + Default>(grid: &Array2<T>) -> Array2<T> {
    let (h, w) = grid.dim();
    let side = h.max(w);
    if h == w {
        return grid.clone();
    }
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let mut out = Array2::from_elem((side, side), T::default());
    out.slice_mut(s![top..top + h, left..left + w]).assign(grid);
    out
}

/// Inverse of [`pad_to_square`] for an original extent of `h × w`.
pub fn crop_centered<T: Copy>(grid: &Array2<T>, h: usize, w: usize) -> Result<Array2<T>> {
    let (gh, gw) = grid.dim();
    if h > gh || w > gw {
        return Err(Error::invalid(format!("cannot crop {gh}x{gw} to {h}x{w}")));
    }
    let (top, left) = ((gh - h) / 2, (gw - w) / 2);
    Ok(grid.slice(s![top..top + h, left..left + w]).to_owned())
}

pub fn zero_pad_to_square(img: &SampleImage) -> SampleImage {
    SampleImage {
        id: img.id.clone(),
        pixels: pad_to_square(&img.pixels),
        resolution_m: img.resolution_m,
    }
}

impl FrontMask {
    pub fn pad_to_square(&self) -> FrontMask {
        FrontMask {
            id: self.id.clone(),
            pixels: pad_to_square(&self.pixels),
            resolution_m: self.resolution_m,
        }
    }
}

/// Bilinear resize (half-pixel convention) of a grid to `out_h × out_w`.
pub fn resize_grid(grid: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = grid.dim();
    let rows = resample_axis(h, out_h);
    let cols = resample_axis(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (r, c) = (rows[y], cols[x]);
        let upper = grid[[r.lo, c.lo]] + c.t * (grid[[r.lo, c.hi]] - grid[[r.lo, c.lo]]);
        let lower = grid[[r.hi, c.lo]] + c.t * (grid[[r.hi, c.hi]] - grid[[r.hi, c.lo]]);
        upper + r.t * (lower - upper)
    })
}

/// Bilinear resize of a square image; resolution scales by `in_side / out_side`.
pub fn bilinear_resize(img: &SampleImage, out_side: usize) -> Result<SampleImage> {
    if out_side < 1 {
        return Err(Error::invalid("output side must be at least 1"));
    }
    let (h, w) = img.dim();
    if h != w {
        return Err(Error::invalid(format!("{}: expected a square image, got {h}x{w}", img.id)));
    }
    Ok(SampleImage {
        id: img.id.clone(),
        pixels: resize_grid(&img.pixels, out_side, out_side),
        resolution_m: img.resolution_m * h as f64 / out_side as f64,
    })
}

/// Source index range covered by output cell `o` when shrinking `src → dst`.
fn footprint(o: usize, src: usize, dst: usize) -> std::ops::Range<usize> {
    let lo = o * src / dst;
    let hi = ((o + 1) * src).div_ceil(dst).max(lo + 1).min(src);
    lo..hi
}

/// Resize a binary mask to `out_side × out_side`. Shrinking marks a cell as
/// foreground when any covered source pixel is (thin lines stay connected);
/// enlarging uses nearest-neighbor sampling.
pub fn resize_mask(mask: &FrontMask, out_side: usize) -> Result<FrontMask> {
    if out_side < 1 {
        return Err(Error::invalid("output side must be at least 1"));
    }
    let (h, w) = mask.dim();
    let nearest = |o: usize, src: usize| (((o as f64 + 0.5) * src as f64 / out_side as f64) as usize).min(src - 1);
    let span = |o: usize, src: usize| {
        if src >= out_side {
            footprint(o, src, out_side)
        } else {
            let i = nearest(o, src);
            i..i + 1
        }
    };
    let pixels = Array2::from_shape_fn((out_side, out_side), |(y, x)| {
        let (ry, rx) = (span(y, h), span(x, w));
        u8::from(mask.pixels.slice(s![ry, rx]).iter().any(|&v| v != 0))
    });
    Ok(FrontMask {
        id: mask.id.clone(),
        pixels,
        resolution_m: mask.resolution_m * h as f64 / out_side as f64,
    })
}

/// Quarter turn counter-clockwise.
pub fn rot90<T: Copy>(grid: &Array2<T>) -> Array2<T> {
    let (h, w) = grid.dim();
    Array2::from_shape_fn((w, h), |(i, j)| grid[[j, w - 1 - i]])
}

/// Flip top to bottom.
pub fn vflip<T: Copy>(grid: &Array2<T>) -> Array2<T> {
    let (h, w) = grid.dim();
    Array2::from_shape_fn((h, w), |(i, j)| grid[[h - 1 - i, j]])
}

/// Element of the group generated by quarter turns and the vertical flip:
/// flip first (if set), then `quarter_turns` counter-clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip: bool,
}

pub const AUGMENT_FACTOR: usize = 8;

impl Transform {
    pub fn all() -> impl Iterator<Item = Transform> {
        [false, true].into_iter().flat_map(|flip| {
            (0..4).map(move |quarter_turns| Transform {
                quarter_turns,
                flip,
            })
        })
    }

    pub fn apply<T: Copy>(&self, grid: &Array2<T>) -> Array2<T> {
        let mut out = if self.flip { vflip(grid) } else { grid.clone() };
        for _ in 0..self.quarter_turns {
            out = rot90(&out);
        }
        out
    }

    pub fn suffix(&self) -> String {
        match (self.quarter_turns, self.flip) {
            (0, false) => String::new(),
            (q, false) => format!("_r{}", 90 * u32::from(q)),
            (q, true) => format!("_f_r{}", 90 * u32::from(q)),
        }
    }
}

/// Expand each pair into its 8 flip/rotation variants (identity first).
pub fn augment_expand(pairs: &[(SampleImage, FrontMask)]) -> Result<Vec<(SampleImage, FrontMask)>> {
    let mut out = Vec::with_capacity(pairs.len() * AUGMENT_FACTOR);
    for (img, mask) in pairs {
        let (h, w) = img.dim();
        if h != w || mask.dim() != (h, w) {
            return Err(Error::invalid(format!(
                "{}: augmentation needs square, equally sized image and mask",
                img.id
            )));
        }
        for t in Transform::all() {
            let id = format!("{}{}", img.id, t.suffix());
            out.push((
                SampleImage {
                    id: id.clone(),
                    pixels: t.apply(&img.pixels),
                    resolution_m: img.resolution_m,
                },
                FrontMask {
                    id,
                    pixels: t.apply(&mask.pixels),
                    resolution_m: mask.resolution_m,
                },
            ));
        }
    }
    Ok(out)
}
