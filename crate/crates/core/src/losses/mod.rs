//! Binary cross-entropy, its distance-weighted variant, and evaluation metrics.
//!
//! The weighted loss scales the prediction by a map that is exactly 1 on the
//! front and grows from 0 toward 1 with distance from it:
//!
//! ```text
//! W   = sigmoid(EDT(y) / w)
//! W~  = 2 (W − 0.5) + y
//! ŷ_w = ŷ ⊙ W~
//! ```
//!
//! and then applies ordinary BCE to `ŷ_w` against the unmodified label. A false
//! positive close to the front is damped, one far away is not.

mod metrics;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imageproc::{edt, FrontMask};
use crate::tensor::{mul, BackwardCtx, Tensor};

pub use metrics::{
    certainty_m, dice_binary, imbalance_ratio, iou, soft_dice, thickness_and_certainty, wdice,
    MetricsRecord, DICE_EPS, METRICS_CSV_HEADER,
};

/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Distance weights explored for the weighted loss and metrics.
pub const DISTANCE_WEIGHTS: [f64; 3] = [4.0, 8.0, 16.0];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `2 (sigmoid(d / w) − 0.5) + y` for one pixel at EDT distance `d`.
pub fn weight_value(distance: f64, w: f64, on_front: bool) -> f64 {
    2.0 * (sigmoid(distance / w) - 0.5) + if on_front { 1.0 } else { 0.0 }
}

/// Per-pixel weights `W~_w` derived from a front label.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub values: Array2<f64>,
    pub w: f64,
}

impl WeightMap {
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

pub fn weight_map(y: &FrontMask, w: f64) -> Result<WeightMap> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::invalid(format!("distance weight must be positive, got {w}")));
    }
    let field = edt(y);
    if field.empty {
        return Err(Error::invalid(format!("{}: weight map of an empty mask", y.id)));
    }
    let values = ndarray::Zip::from(&field.distances)
        .and(&y.pixels)
        .map_collect(|&d, &m| weight_value(d, w, m != 0));
    Ok(WeightMap { values, w })
}

/// `ŷ ⊙ W~`; the weights are treated as constants.
pub fn weighted_prediction(pred: &Tensor, weights: &Tensor) -> Result<Tensor> {
    if pred.shape() != weights.shape() {
        return Err(Error::shape(
            "weighted_prediction",
            format!("{:?} vs {:?}", pred.shape(), weights.shape()),
        ));
    }
    mul(pred, &weights.detach())
}

/// Loss contribution of one pixel with clamped probability.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of probabilities `pred` against `target`.
///
/// The clamp is transparent to the gradient, which is evaluated at the
/// clamped probability.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "bce",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    let n = pred.numel() as f64;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| bce_term(f64::from(p), f64::from(y)))
        .sum();
    Ok(Tensor::from_op(
        "bce",
        vec![1],
        vec![(total / n) as f32],
        vec![pred.clone(), target.detach()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let g = f64::from(ctx.grad[0]) / n;
            let dp = ctx.inputs[0]
                .data()
                .iter()
                .zip(ctx.inputs[1].data())
                .map(|(&p, &y)| {
                    let p = f64::from(p).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    let y = f64::from(y);
                    (g * ((1.0 - y) / (1.0 - p) - y / p)) as f32
                })
                .collect();
            vec![Some(dp), None]
        }),
    ))
}

/// BCE of the distance-weighted prediction against the unmodified label.
pub fn wbce(pred: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Tensor> {
    bce(&weighted_prediction(pred, weights)?, target)
}
