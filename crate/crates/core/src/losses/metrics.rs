use std::fmt::Write as _;

use ndarray::Array2;

use super::weight_map;
use crate::error::{Error, Result};
use crate::imageproc::{skeleton_length, FrontMask};

/// Added to Dice denominators.
pub const DICE_EPS: f64 = 1e-7;

pub const METRICS_CSV_HEADER: &str =
    "epoch,lr,train_loss,val_loss,dice,wdice_4,wdice_8,wdice_16,iou,thickness_px,certainty_m";

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} vs {b} pixels")));
    }
    Ok(())
}

/// `2 Σ p·y / (Σp + Σy + ε)`; two empty inputs score 1.
pub fn soft_dice(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_len("soft_dice", pred.len(), target.len())?;
    let (mut inter, mut sp, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &y) in pred.iter().zip(target) {
        let (p, y) = (f64::from(p), f64::from(y));
        inter += p * y;
        sp += p;
        sy += y;
    }
    if sp == 0.0 && sy == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / (sp + sy + DICE_EPS))
}

fn binarize(pred: &[f32], thresh: f32) -> Vec<f32> {
    pred.iter().map(|&p| if p > thresh { 1.0 } else { 0.0 }).collect()
}

fn as_f32(target: &[u8]) -> Vec<f32> {
    target.iter().map(|&v| f32::from(u8::from(v != 0))).collect()
}

/// Dice after thresholding: a pixel is foreground when `p > thresh`.
pub fn dice_binary(pred: &[f32], target: &[u8], thresh: f32) -> Result<f64> {
    check_len("dice_binary", pred.len(), target.len())?;
    soft_dice(&binarize(pred, thresh), &as_f32(target))
}

/// Intersection over union after thresholding; two empty masks score 1.
pub fn iou(pred: &[f32], target: &[u8], thresh: f32) -> Result<f64> {
    check_len("iou", pred.len(), target.len())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &y) in pred.iter().zip(target) {
        let (a, b) = (p > thresh, y != 0);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Soft Dice of the distance-weighted prediction against the label.
pub fn wdice(pred: &Array2<f32>, y: &FrontMask, w: f64) -> Result<f64> {
    if pred.dim() != y.dim() {
        return Err(Error::shape(
            "wdice",
            format!("{:?} vs {:?}", pred.dim(), y.dim()),
        ));
    }
    let wm = weight_map(y, w)?;
    let weighted: Vec<f32> = pred
        .iter()
        .zip(wm.values.iter())
        .map(|(&p, &v)| (f64::from(p) * v) as f32)
        .collect();
    soft_dice(&weighted, &as_f32(y.pixels.as_slice().expect("standard layout")))
}

/// Half the line thickness expressed in meters.
pub fn certainty_m(thickness_px: f64, resolution_m: f64) -> f64 {
    thickness_px * resolution_m / 2.0
}

/// Mean line thickness (foreground count over skeleton length) across the
/// masks that contain foreground, and the matching certainty in meters.
pub fn thickness_and_certainty(masks: &[Array2<u8>], resolution_m: f64) -> (f64, f64) {
    let ratios: Vec<f64> = masks
        .iter()
        .filter_map(|m| {
            let fg = m.iter().filter(|&&v| v != 0).count();
            (fg > 0).then(|| fg as f64 / skeleton_length(m).max(1) as f64)
        })
        .collect();
    if ratios.is_empty() {
        log::warn!("thickness requested for {} empty predictions", masks.len());
        return (0.0, 0.0);
    }
    let t = ratios.iter().sum::<f64>() / ratios.len() as f64;
    (t, certainty_m(t, resolution_m))
}

/// Background pixels per front pixel.
pub fn imbalance_ratio(mask: &FrontMask) -> Result<f64> {
    let fg = mask.foreground();
    if fg == 0 {
        return Err(Error::invalid(format!("{}: mask has no front pixels", mask.id)));
    }
    Ok((mask.pixels.len() - fg) as f64 / fg as f64)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dice: f64,
    pub wdice_4: f64,
    pub wdice_8: f64,
    pub wdice_16: f64,
    pub iou: f64,
    pub thickness_px: f64,
    pub certainty_m: f64,
}

impl MetricsRecord {
    /// Weighted Dice for one of the tracked weights.
    pub fn wdice(&self, w: f64) -> Option<f64> {
        match w {
            4.0 => Some(self.wdice_4),
            8.0 => Some(self.wdice_8),
            16.0 => Some(self.wdice_16),
            _ => None,
        }
    }

    pub fn csv_row(&self) -> String {
        self.row(false)
    }

    /// Like [`MetricsRecord::csv_row`] but with every float written to round-trip exactly.
    pub fn exact_row(&self) -> String {
        self.row(true)
    }

    fn row(&self, exact: bool) -> String {
        let mut s = if exact {
            format!("{},{:?}", self.epoch, self.lr)
        } else {
            format!("{},{:e}", self.epoch, self.lr)
        };
        for v in [
            self.train_loss,
            self.val_loss,
            self.dice,
            self.wdice_4,
            self.wdice_8,
            self.wdice_16,
            self.iou,
            self.thickness_px,
            self.certainty_m,
        ] {
            if exact {
                write!(s, ",{v:?}")
            } else {
                write!(s, ",{v:.6}")
            }
            .expect("writing to a String");
        }
        s
    }

    /// Parse a row written by [`MetricsRecord::csv_row`] or [`MetricsRecord::exact_row`].
    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 11 {
            return Err(Error::invalid(format!(
                "metrics row has {} fields, expected 11",
                fields.len()
            )));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("metrics field {i} ({:?}): {e}", fields[i])))
        };
        Ok(Self {
            epoch: fields[0]
                .parse()
                .map_err(|e| Error::invalid(format!("metrics epoch {:?}: {e}", fields[0])))?,
            lr: num(1)?,
            train_loss: num(2)?,
            val_loss: num(3)?,
            dice: num(4)?,
            wdice_4: num(5)?,
            wdice_8: num(6)?,
            wdice_16: num(7)?,
            iou: num(8)?,
            thickness_px: num(9)?,
            certainty_m: num(10)?,
        })
    }
}
