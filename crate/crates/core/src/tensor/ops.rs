use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearities used by the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `x` for `x > 0`, else `slope * x`. The derivative at 0 is `slope`.
    LeakyRelu(f32),
    Relu,
    Sigmoid,
}

pub(crate) fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let data: Vec<f32> = match kind {
        Activation::LeakyRelu(slope) => x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
        Activation::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
        Activation::Sigmoid => x.data().iter().map(|&v| sigmoid_f32(v)).collect(),
    };
    let name = match kind {
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
    };
    Ok(Tensor::from_op(
        name,
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let x = ctx.inputs[0].data();
            let g = ctx.grad;
            let dx: Vec<f32> = match kind {
                Activation::LeakyRelu(slope) => x
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
                    .collect(),
                Activation::Relu => x
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
                Activation::Sigmoid => ctx
                    .output
                    .iter()
                    .zip(g)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect(),
            };
            vec![Some(dx)]
        }),
    ))
}

enum Pairing {
    Same,
    /// `b` is `[B,1,H,W]`, repeated over the `channels` of `a`.
    ChannelBroadcast { channels: usize, plane: usize },
}

fn pairing(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Pairing> {
    if a.shape() == b.shape() {
        return Ok(Pairing::Same);
    }
    if let ([ab, ac, ah, aw], [bb, 1, bh, bw]) = (a.shape(), b.shape()) {
        if ab == bb && ah == bh && aw == bw {
            return Ok(Pairing::ChannelBroadcast {
                channels: *ac,
                plane: ah * aw,
            });
        }
    }
    Err(Error::shape(
        op,
        format!("incompatible shapes {:?} and {:?}", a.shape(), b.shape()),
    ))
}

/// Index into `b` for flat index `i` of `a`.
fn broadcast_index(i: usize, channels: usize, plane: usize) -> usize {
    let batch = i / (channels * plane);
    batch * plane + i % plane
}

fn reduce_to_b(g: &[f32], b_len: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; b_len];
    for (i, &v) in g.iter().enumerate() {
        out[broadcast_index(i, channels, plane)] += v;
    }
    out
}

/// Elementwise sum. `b` may be a single-channel map broadcast over `a`'s channels.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let pairing = pairing("add", a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f32> = match pairing {
        Pairing::Same => ad.iter().zip(bd).map(|(x, y)| x + y).collect(),
        Pairing::ChannelBroadcast { channels, plane } => ad
            .iter()
            .enumerate()
            .map(|(i, x)| x + bd[broadcast_index(i, channels, plane)])
            .collect(),
    };
    let b_len = b.numel();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let ga = ctx.inputs[0].requires_grad().then(|| ctx.grad.to_vec());
            let gb = ctx.inputs[1].requires_grad().then(|| match pairing {
                Pairing::Same => ctx.grad.to_vec(),
                Pairing::ChannelBroadcast { channels, plane } => {
                    reduce_to_b(ctx.grad, b_len, channels, plane)
                }
            });
            vec![ga, gb]
        }),
    ))
}

/// Elementwise product. `b` may be a single-channel map broadcast over `a`'s channels.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let pairing = pairing("mul", a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f32> = match pairing {
        Pairing::Same => ad.iter().zip(bd).map(|(x, y)| x * y).collect(),
        Pairing::ChannelBroadcast { channels, plane } => ad
            .iter()
            .enumerate()
            .map(|(i, x)| x * bd[broadcast_index(i, channels, plane)])
            .collect(),
    };
    let b_len = b.numel();
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let g = ctx.grad;
            match pairing {
                Pairing::Same => {
                    let ga = ctx.inputs[0]
                        .requires_grad()
                        .then(|| g.iter().zip(b).map(|(g, b)| g * b).collect());
                    let gb = ctx.inputs[1]
                        .requires_grad()
                        .then(|| g.iter().zip(a).map(|(g, a)| g * a).collect());
                    vec![ga, gb]
                }
                Pairing::ChannelBroadcast { channels, plane } => {
                    let ga = ctx.inputs[0].requires_grad().then(|| {
                        g.iter()
                            .enumerate()
                            .map(|(i, g)| g * b[broadcast_index(i, channels, plane)])
                            .collect()
                    });
                    let gb = ctx.inputs[1].requires_grad().then(|| {
                        let prod: Vec<f32> = g.iter().zip(a).map(|(g, a)| g * a).collect();
                        reduce_to_b(&prod, b_len, channels, plane)
                    });
                    vec![ga, gb]
                }
            }
        }),
    ))
}

/// Multiply by a constant.
pub fn scale(x: &Tensor, k: f32) -> Tensor {
    let data = x.data().iter().map(|v| v * k).collect();
    Tensor::from_op(
        "scale",
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| vec![Some(ctx.grad.iter().map(|g| g * k).collect())]),
    )
}

fn reduce(x: &Tensor, op: &'static str, factor: f64) -> Tensor {
    let total: f64 = x.data().iter().map(|&v| f64::from(v)).sum();
    let n = x.numel();
    Tensor::from_op(
        op,
        vec![1],
        vec![(total * factor) as f32],
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            vec![Some(vec![(f64::from(ctx.grad[0]) * factor) as f32; n])]
        }),
    )
}

/// Sum of all elements (accumulated in `f64`).
pub fn sum(x: &Tensor) -> Tensor {
    reduce(x, "sum", 1.0)
}

/// Mean of all elements (accumulated in `f64`).
pub fn mean(x: &Tensor) -> Tensor {
    reduce(x, "mean", 1.0 / x.numel() as f64)
}

/// Channel concatenation of rank-4 tensors with equal batch and spatial extents.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels needs at least one input"))?;
    let [b, _, h, w] = first.dims4()?;
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let [pb, pc, ph, pw] = p.dims4()?;
        if (pb, ph, pw) != (b, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} does not match {:?}", p.shape(), first.shape()),
            ));
        }
        channels.push(pc);
    }
    let plane = h * w;
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(b * total * plane);
    for bi in 0..b {
        for (p, &c) in parts.iter().zip(&channels) {
            let start = bi * c * plane;
            data.extend_from_slice(&p.data()[start..start + c * plane]);
        }
    }
    Ok(Tensor::from_op(
        "concat_channels",
        vec![b, total, h, w],
        data,
        parts.iter().map(|&t| t.clone()).collect(),
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut grads: Vec<Vec<f32>> = channels
                .iter()
                .map(|c| Vec::with_capacity(b * c * plane))
                .collect();
            for bi in 0..b {
                let mut offset = bi * total * plane;
                for (g, &c) in grads.iter_mut().zip(&channels) {
                    g.extend_from_slice(&ctx.grad[offset..offset + c * plane]);
                    offset += c * plane;
                }
            }
            grads
                .into_iter()
                .zip(ctx.inputs)
                .map(|(g, t)| t.requires_grad().then_some(g))
                .collect()
        }),
    ))
}
