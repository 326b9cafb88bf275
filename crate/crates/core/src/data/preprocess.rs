use std::path::Path;

use super::{create_layout, load_dataset, write_sample, DatasetIndex};
use crate::error::{Error, Result};
use crate::imageproc::{
    adaptive_median_filter, bilinear_resize, dilate_to_width, resize_mask, standardize,
    zero_pad_to_square, FrontMask, SampleImage,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Side of the square network input.
    pub size: usize,
    /// Front width in pixels after resizing.
    pub front_width: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: 512,
            front_width: 6,
        }
    }
}

/// Despeckle, standardize, pad to a square and resize an unlabeled image.
pub fn preprocess_image(img: &SampleImage, cfg: &PreprocessConfig) -> Result<SampleImage> {
    if cfg.size == 0 {
        return Err(Error::invalid("size must be positive"));
    }
    let filtered = standardize(&adaptive_median_filter(img)?);
    bilinear_resize(&zero_pad_to_square(&filtered), cfg.size)
}

/// Despeckle, standardize, pad to a square, resize; the mask is padded,
/// resized and thickened to the configured front width.
pub fn preprocess_sample(
    img: &SampleImage,
    mask: &FrontMask,
    cfg: &PreprocessConfig,
) -> Result<(SampleImage, FrontMask)> {
    if img.dim() != mask.dim() {
        return Err(Error::invalid(format!(
            "{}: image {:?} and mask {:?} differ in size",
            img.id,
            img.dim(),
            mask.dim()
        )));
    }
    if cfg.size == 0 || cfg.front_width == 0 {
        return Err(Error::invalid("size and front width must be positive"));
    }
    let image = preprocess_image(img, cfg)?;
    let mask = dilate_to_width(&resize_mask(&mask.pad_to_square(), cfg.size)?, cfg.front_width)?;
    Ok((image, mask))
}

/// Preprocess every sample of `src` into a new dataset at `dst`, keeping ids and splits.
pub fn preprocess_dataset(src: &Path, dst: &Path, cfg: &PreprocessConfig) -> Result<DatasetIndex> {
    let same = match (src.canonicalize(), dst.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::invalid("output directory must differ from the input"));
    }
    let index = load_dataset(src)?;
    create_layout(dst)?;
    let mut entries = Vec::with_capacity(index.len());
    for e in &index.entries {
        let (img, mask) = index.load_sample(e)?;
        let (img, mask) = preprocess_sample(&img, &mask, cfg)?;
        entries.push(write_sample(dst, &img, &mask, e.split)?);
        log::debug!("preprocessed {}", e.id);
    }
    let out = DatasetIndex {
        root: dst.to_path_buf(),
        entries,
    };
    out.write_csv()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sample, SynthConfig};

    #[test]
    fn output_is_square_with_scaled_resolution() {
        let cfg = SynthConfig { side: 64, seed: 3, ..SynthConfig::default() };
        let (img, mask) = synth_sample(&cfg, 0).unwrap();
        let pc = PreprocessConfig { size: 32, front_width: 3 };
        let (i2, m2) = preprocess_sample(&img, &mask, &pc).unwrap();
        assert_eq!(i2.dim(), (32, 32));
        assert_eq!(m2.dim(), (32, 32));
        assert!((i2.resolution_m - img.resolution_m * 2.0).abs() < 1e-9);
        assert!(i2.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m2.foreground() > mask.foreground() / 2);
    }

    #[test]
    fn rejects_size_mismatch() {
        let img = SampleImage::new("a", ndarray::Array2::zeros((4, 4)), 40.0).unwrap();
        let mask = FrontMask::new("a", ndarray::Array2::zeros((4, 5)), 40.0).unwrap();
        assert!(preprocess_sample(&img, &mask, &PreprocessConfig::default()).is_err());
    }
}
