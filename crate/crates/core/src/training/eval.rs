use ndarray::Array2;

use super::LossKind;
use crate::attnet::{AttentionMaps, Mode, ModelParams};
use crate::error::{Error, Result};
use crate::imageproc::{FrontMask, SampleImage};
use crate::losses::{
    bce, dice_binary, iou, soft_dice, thickness_and_certainty, wbce, wdice, weight_map,
    MetricsRecord,
};
use crate::tensor::Tensor;

/// Split-level means of the segmentation metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub soft_dice: f64,
    pub dice: f64,
    pub wdice_4: f64,
    pub wdice_8: f64,
    pub wdice_16: f64,
    pub iou: f64,
    pub thickness_px: f64,
    pub certainty_m: f64,
    pub samples: usize,
}

impl Evaluation {
    pub fn wdice(&self, w: f64) -> Option<f64> {
        match w {
            4.0 => Some(self.wdice_4),
            8.0 => Some(self.wdice_8),
            16.0 => Some(self.wdice_16),
            _ => None,
        }
    }

    pub fn to_record(&self, epoch: usize, lr: f64, train_loss: f64) -> MetricsRecord {
        MetricsRecord {
            epoch,
            lr,
            train_loss,
            val_loss: self.loss,
            dice: self.dice,
            wdice_4: self.wdice_4,
            wdice_8: self.wdice_8,
            wdice_16: self.wdice_16,
            iou: self.iou,
            thickness_px: self.thickness_px,
            certainty_m: self.certainty_m,
        }
    }

    /// `key=value` lines for the final report.
    pub fn report(&self) -> String {
        format!(
            "samples={}\nloss={:.6}\ndice={:.6}\nwdice_4={:.6}\nwdice_8={:.6}\nwdice_16={:.6}\niou={:.6}\nthickness_px={:.6}\ncertainty_m={:.6}\n",
            self.samples,
            self.loss,
            self.dice,
            self.wdice_4,
            self.wdice_8,
            self.wdice_16,
            self.iou,
            self.thickness_px,
            self.certainty_m
        )
    }
}

fn image_tensor(img: &SampleImage) -> Result<Tensor> {
    let (h, w) = img.dim();
    Tensor::new(vec![1, 1, h, w], img.pixels.iter().copied().collect())
}

/// Probability map and attention maps for one image.
pub fn predict(model: &ModelParams, img: &SampleImage) -> Result<(Array2<f32>, AttentionMaps)> {
    let out = model.forward(&image_tensor(img)?, Mode::Eval)?;
    let probs = Array2::from_shape_vec(img.dim(), out.probs.data().to_vec())
        .map_err(|e| Error::shape("predict", e.to_string()))?;
    Ok((probs, out.attention))
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluate `model` one sample at a time; the result does not depend on sample order.
pub fn evaluate(
    model: &ModelParams,
    samples: &[(SampleImage, FrontMask)],
    loss: LossKind,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let n = samples.len();
    let mut cols: [Vec<f64>; 7] = Default::default();
    let mut thickness = Vec::new();
    let mut resolution = Vec::with_capacity(n);
    for (img, mask) in samples {
        if img.dim() != mask.dim() {
            return Err(Error::invalid(format!("{}: image and mask differ in size", img.id)));
        }
        let (probs, _) = predict(model, img)?;
        let p = probs.as_slice().expect("standard layout");
        let y = mask.pixels.as_slice().expect("standard layout");
        let (h, w) = img.dim();
        let pred_t = Tensor::new(vec![1, 1, h, w], p.to_vec())?;
        let target = Tensor::new(vec![1, 1, h, w], y.iter().map(|&v| f32::from(v)).collect())?;
        let l = match loss {
            LossKind::Bce => bce(&pred_t, &target)?,
            LossKind::Wbce(wt) => {
                let wm = Tensor::new(vec![1, 1, h, w], weight_map(mask, wt)?.to_f32())?;
                wbce(&pred_t, &target, &wm)?
            }
        };
        cols[0].push(f64::from(l.item()?));
        cols[1].push(soft_dice(p, target.data())?);
        cols[2].push(dice_binary(p, y, 0.5)?);
        cols[3].push(wdice(&probs, mask, 4.0)?);
        cols[4].push(wdice(&probs, mask, 8.0)?);
        cols[5].push(wdice(&probs, mask, 16.0)?);
        cols[6].push(iou(p, y, 0.5)?);
        let binary = probs.mapv(|v| u8::from(v > 0.5));
        if binary.iter().any(|&v| v != 0) {
            thickness.push(thickness_and_certainty(&[binary], 1.0).0);
        }
        resolution.push(img.resolution_m);
    }
    let [loss, soft, dice, w4, w8, w16, iou] = cols.map(mean);
    let thickness_px = mean(thickness);
    Ok(Evaluation {
        loss,
        soft_dice: soft,
        dice,
        wdice_4: w4,
        wdice_8: w8,
        wdice_16: w16,
        iou,
        thickness_px,
        certainty_m: crate::losses::certainty_m(thickness_px, mean(resolution)),
        samples: n,
    })
}
