use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running mean and (unbiased) variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average with [`BN_MOMENTUM`].
    pub fn update(&mut self, batch: &BatchStats) {
        let m = BN_MOMENTUM;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = ((1.0 - m) * f64::from(*r) + m * b) as f32;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *r = ((1.0 - m) * f64::from(*r) + m * b) as f32;
        }
    }
}

/// Statistics of one training batch, per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
}

/// Batch normalization over `B×H×W` for every channel of `x [B,C,H,W]`.
///
/// In training mode the batch statistics are used and returned so the caller
/// can fold them into its [`RunningStats`]; in eval mode `running` is used.
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    training: bool,
) -> Result<(Tensor, Option<BatchStats>)> {
    let [b, c, h, w] = x.dims4()?;
    if gamma.numel() != c || beta.numel() != c || running.channels() != c {
        return Err(Error::shape(
            "batch_norm2d",
            format!(
                "{c} channels but gamma {:?}, beta {:?}, running stats {}",
                gamma.shape(),
                beta.shape(),
                running.channels()
            ),
        ));
    }
    let plane = h * w;
    let count = b * plane;
    let xd = x.data();
    let channel_values = |ch: usize| {
        (0..b).flat_map(move |bi| xd[(bi * c + ch) * plane..][..plane].iter().copied())
    };

    let (mean, var): (Vec<f64>, Vec<f64>) = if training {
        (0..c)
            .map(|ch| {
                let mu = channel_values(ch).map(f64::from).sum::<f64>() / count as f64;
                let var = channel_values(ch)
                    .map(|v| (f64::from(v) - mu).powi(2))
                    .sum::<f64>()
                    / count as f64;
                (mu, var)
            })
            .unzip()
    } else {
        (
            running.mean.iter().map(|&v| f64::from(v)).collect(),
            running.var.iter().map(|&v| f64::from(v)).collect(),
        )
    };
    let inv_std: Vec<f32> = var.iter().map(|v| (1.0 / (v + BN_EPS).sqrt()) as f32).collect();
    let mean32: Vec<f32> = mean.iter().map(|&m| m as f32).collect();

    let mut xhat = vec![0.0f32; xd.len()];
    let mut out = vec![0.0f32; xd.len()];
    for (i, (xv, (nv, ov))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
        let ch = (i / plane) % c;
        *nv = (xv - mean32[ch]) * inv_std[ch];
        *ov = gamma.data()[ch] * *nv + beta.data()[ch];
    }

    let stats = training.then(|| BatchStats {
        unbiased_var: var
            .iter()
            .map(|v| if count > 1 { v * count as f64 / (count - 1) as f64 } else { *v })
            .collect(),
        mean: mean.clone(),
    });

    let y = Tensor::from_op(
        "batch_norm2d",
        vec![b, c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let g = ctx.grad;
            let gamma = ctx.inputs[1].data();
            let mut sum_g = vec![0.0f64; c];
            let mut sum_gx = vec![0.0f64; c];
            for (i, (&gv, &nv)) in g.iter().zip(&xhat).enumerate() {
                let ch = (i / plane) % c;
                sum_g[ch] += f64::from(gv);
                sum_gx[ch] += f64::from(gv) * f64::from(nv);
            }
            let dx = ctx.inputs[0].requires_grad().then(|| {
                let n = count as f64;
                g.iter()
                    .zip(&xhat)
                    .enumerate()
                    .map(|(i, (&gv, &nv))| {
                        let ch = (i / plane) % c;
                        let scale = f64::from(gamma[ch]) * f64::from(inv_std[ch]);
                        if training {
                            let centered = f64::from(gv)
                                - sum_g[ch] / n
                                - f64::from(nv) * sum_gx[ch] / n;
                            (scale * centered) as f32
                        } else {
                            (scale * f64::from(gv)) as f32
                        }
                    })
                    .collect()
            });
            let dgamma = ctx.inputs[1]
                .requires_grad()
                .then(|| sum_gx.iter().map(|&v| v as f32).collect());
            let dbeta = ctx.inputs[2]
                .requires_grad()
                .then(|| sum_g.iter().map(|&v| v as f32).collect());
            vec![dx, dgamma, dbeta]
        }),
    );
    Ok((y, stats))
}
