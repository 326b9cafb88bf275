use crate::error::{Error, Result};
use crate::tensor::{activation, add, bilinear_upsample, conv2d, mul, Activation, Tensor};

/// Weights of one additive attention gate.
///
/// `wx [F_int, F_x, 1, 1]` is applied with stride 2 so the skip feature meets
/// the coarser gating signal; `wg [F_int, F_g, 1, 1]` with bias `bg [F_int]`;
/// `psi [1, F_int, 1, 1]` with bias `bpsi [1]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionGateParams<'a> {
    pub wx: &'a Tensor,
    pub wg: &'a Tensor,
    pub bg: &'a Tensor,
    pub psi: &'a Tensor,
    pub bpsi: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct GateOutput {
    /// The skip feature scaled by the attention coefficients.
    pub x_hat: Tensor,
    /// Coefficients upsampled to the skip resolution, `[B, 1, H, W]`.
    pub alpha: Tensor,
    /// Coefficients at the gating resolution, `[B, 1, H/2, W/2]`.
    pub alpha_native: Tensor,
}

/// `α = σ(ψᵀ relu(W_xᵀx + W_gᵀg + b_g) + b_ψ)` at the resolution of `g`,
/// bilinearly upsampled and multiplied into every channel of `x`.
pub fn attention_gate(x: &Tensor, g: &Tensor, p: AttentionGateParams<'_>) -> Result<GateOutput> {
    let [bx, _, h, w] = x.dims4()?;
    let [bg, _, gh, gw] = g.dims4()?;
    if bx != bg || 2 * gh != h || 2 * gw != w {
        return Err(Error::shape(
            "attention_gate",
            format!(
                "gating signal {:?} must be exactly half of skip {:?}",
                g.shape(),
                x.shape()
            ),
        ));
    }
    let theta = conv2d(x, p.wx, None, 2, 0)?;
    let phi = conv2d(g, p.wg, Some(p.bg), 1, 0)?;
    let f = activation(&add(&theta, &phi)?, Activation::Relu)?;
    let s = conv2d(&f, p.psi, Some(p.bpsi), 1, 0)?;
    let alpha_native = activation(&s, Activation::Sigmoid)?;
    let alpha = bilinear_upsample(&alpha_native, h, w)?;
    let x_hat = mul(x, &alpha)?;
    Ok(GateOutput {
        x_hat,
        alpha,
        alpha_native,
    })
}
