//! 2-D convolution and its transpose via im2col + SGEMM.

use std::borrow::Cow;

use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// `C = A·B + beta·C` where `A` is `m×k`, `B` is `k×n`, all row-major.
/// `a_t`/`b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry over one `channels × in_h × in_w` image.
#[derive(Debug, Clone, Copy)]
struct Geom {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geom {
    fn new(
        op: &'static str,
        channels: usize,
        (in_h, in_w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid(format!("{op}: stride must be positive")));
        }
        if in_h + 2 * pad < kh || in_w + 2 * pad < kw {
            return Err(Error::shape(
                op,
                format!("kernel {kh}x{kw} larger than padded input {in_h}x{in_w} (pad {pad})"),
            ));
        }
        Ok(Geom {
            channels,
            in_h,
            in_w,
            kh,
            kw,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output columns `[lo, hi)` for kernel column `kj` when `stride == 1`.
    fn unit_stride_span(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj).min(self.out_w);
        let hi = (self.in_w + self.pad).saturating_sub(kj).min(self.out_w);
        (lo, hi.max(lo))
    }

    /// Calls `f(column offset, kj, image row offset)` for every output row of
    /// every column-matrix row; the image offset is `None` inside the padding.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, Option<usize>)) {
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        let src = (iy >= 0 && (iy as usize) < self.in_h)
                            .then(|| (c * self.in_h + iy as usize) * self.in_w);
                        f(row * self.cols() + oy * self.out_w, kj, src);
                    }
                }
            }
        }
    }
}

fn im2col(x: &[f32], g: &Geom) -> Vec<f32> {
    let mut cols = vec![0.0f32; g.rows() * g.cols()];
    g.for_each_row(|dst, kj, src| {
        let Some(src) = src else { return };
        let dst = &mut cols[dst..dst + g.out_w];
        let line = &x[src..src + g.in_w];
        if g.stride == 1 {
            let (lo, hi) = g.unit_stride_span(kj);
            if hi == lo {
                return;
            }
            let start = lo + kj - g.pad;
            dst[lo..hi].copy_from_slice(&line[start..start + (hi - lo)]);
        } else {
            for (ox, d) in dst.iter_mut().enumerate() {
                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                if ix >= 0 && (ix as usize) < g.in_w {
                    *d = line[ix as usize];
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the image.
fn col2im(cols: &[f32], g: &Geom, x: &mut [f32]) {
    g.for_each_row(|src_off, kj, dst| {
        let Some(dst) = dst else { return };
        let src = &cols[src_off..src_off + g.out_w];
        let line = &mut x[dst..dst + g.in_w];
        if g.stride == 1 {
            let (lo, hi) = g.unit_stride_span(kj);
            if hi == lo {
                return;
            }
            let start = lo + kj - g.pad;
            for (d, s) in line[start..start + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                *d += s;
            }
        } else {
            for (ox, s) in src.iter().enumerate() {
                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                if ix >= 0 && (ix as usize) < g.in_w {
                    line[ix as usize] += s;
                }
            }
        }
    });
}

fn columns<'a>(x: &'a [f32], g: &Geom) -> Cow<'a, [f32]> {
    if g.is_pointwise() {
        Cow::Borrowed(x)
    } else {
        Cow::Owned(im2col(x, g))
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.numel() != channels => Err(Error::shape(
            op,
            format!("bias {:?} for {channels} output channels", b.shape()),
        )),
        _ => Ok(()),
    }
}

fn add_bias(out: &mut [f32], bias: Option<&Tensor>, batch: usize, channels: usize, plane: usize) {
    let Some(bias) = bias else { return };
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias.data()[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    debug_assert_eq!(out.len(), batch * channels * plane);
}

fn bias_grad(grad: &[f32], channels: usize, plane: usize) -> Vec<f32> {
    let mut db = vec![0.0f64; channels];
    for (i, chunk) in grad.chunks(plane).enumerate() {
        db[i % channels] += chunk.iter().map(|&v| f64::from(v)).sum::<f64>();
    }
    db.into_iter().map(|v| v as f32).collect()
}

/// Cross-correlation of `x [B,Cin,H,W]` with `weight [Cout,Cin,kh,kw]`.
///
/// Output extents are `(H + 2·padding − kh)/stride + 1` (floored), likewise for width.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [batch, cin, h, w] = x.dims4()?;
    let [cout, wcin, kh, kw] = weight.dims4()?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input {:?} has {cin} channels, weight {:?} expects {wcin}",
                x.shape(),
                weight.shape()
            ),
        ));
    }
    check_bias("conv2d", bias, cout)?;
    let g = Geom::new("conv2d", cin, (h, w), (kh, kw), stride, padding)?;
    let (k, n) = (g.rows(), g.cols());

    let mut out = vec![0.0f32; batch * cout * n];
    for (xb, ob) in x.data().chunks(g.in_len()).zip(out.chunks_mut(cout * n)) {
        let cols = columns(xb, &g);
        gemm(cout, k, n, weight.data(), false, &cols, false, ob, 0.0);
    }
    add_bias(&mut out, bias, batch, cout, n);

    let mut inputs = vec![x.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(
        "conv2d",
        vec![batch, cout, g.out_h, g.out_w],
        out,
        inputs,
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let (x, weight) = (&ctx.inputs[0], &ctx.inputs[1]);
            let mut dx = x.requires_grad().then(|| vec![0.0f32; x.numel()]);
            let mut dw = weight.requires_grad().then(|| vec![0.0f32; weight.numel()]);
            let mut dcols = vec![0.0f32; k * n];
            for (b, gb) in ctx.grad.chunks(cout * n).enumerate() {
                let xb = &x.data()[b * g.in_len()..(b + 1) * g.in_len()];
                if let Some(dw) = dw.as_mut() {
                    let cols = columns(xb, &g);
                    gemm(cout, n, k, gb, false, &cols, true, dw, 1.0);
                }
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * g.in_len()..(b + 1) * g.in_len()];
                    if g.is_pointwise() {
                        gemm(k, cout, n, weight.data(), true, gb, false, dxb, 0.0);
                    } else {
                        gemm(k, cout, n, weight.data(), true, gb, false, &mut dcols, 0.0);
                        col2im(&dcols, &g, dxb);
                    }
                }
            }
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(
                    ctx.inputs[2]
                        .requires_grad()
                        .then(|| bias_grad(ctx.grad, cout, n)),
                );
            }
            grads
        }),
    ))
}

/// Transposed convolution of `x [B,Cin,H,W]` with `weight [Cin,Cout,k,k]`.
///
/// Output extents are `(H − 1)·stride − 2·padding + k`; with `k = stride = 2`
/// the spatial size doubles. Forward equals the input-gradient pass of
/// [`conv2d`] with the same weight tensor.
pub fn transposed_conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [batch, cin, h, w] = x.dims4()?;
    let [wcin, cout, kh, kw] = weight.dims4()?;
    if wcin != cin {
        return Err(Error::shape(
            "transposed_conv2d",
            format!(
                "input {:?} has {cin} channels, weight {:?} expects {wcin}",
                x.shape(),
                weight.shape()
            ),
        ));
    }
    check_bias("transposed_conv2d", bias, cout)?;
    if stride == 0 {
        return Err(Error::invalid("transposed_conv2d: stride must be positive"));
    }
    let out_h = ((h - 1) * stride + kh)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::shape("transposed_conv2d", "padding exceeds output"))?;
    let out_w = ((w - 1) * stride + kw)
        .checked_sub(2 * padding)
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::shape("transposed_conv2d", "padding exceeds output"))?;
    // Geometry of the equivalent forward conv: large output grid -> small input grid.
    let g = Geom::new("transposed_conv2d", cout, (out_h, out_w), (kh, kw), stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (k, n) = (g.rows(), g.cols());

    let mut out = vec![0.0f32; batch * g.in_len()];
    let mut cols = vec![0.0f32; k * n];
    for (xb, ob) in x.data().chunks(cin * n).zip(out.chunks_mut(g.in_len())) {
        if g.is_pointwise() {
            gemm(k, cin, n, weight.data(), true, xb, false, ob, 0.0);
        } else {
            gemm(k, cin, n, weight.data(), true, xb, false, &mut cols, 0.0);
            col2im(&cols, &g, ob);
        }
    }
    add_bias(&mut out, bias, batch, cout, out_h * out_w);

    let mut inputs = vec![x.clone(), weight.clone()];
    inputs.extend(bias.cloned());
    Ok(Tensor::from_op(
        "transposed_conv2d",
        vec![batch, cout, out_h, out_w],
        out,
        inputs,
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let (x, weight) = (&ctx.inputs[0], &ctx.inputs[1]);
            let mut dx = x.requires_grad().then(|| vec![0.0f32; x.numel()]);
            let mut dw = weight.requires_grad().then(|| vec![0.0f32; weight.numel()]);
            for (b, gb) in ctx.grad.chunks(g.in_len()).enumerate() {
                let gcols = columns(gb, &g);
                if let Some(dx) = dx.as_mut() {
                    let dxb = &mut dx[b * cin * n..(b + 1) * cin * n];
                    gemm(cin, k, n, weight.data(), false, &gcols, false, dxb, 0.0);
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &x.data()[b * cin * n..(b + 1) * cin * n];
                    gemm(cin, n, k, xb, false, &gcols, true, dw, 1.0);
                }
            }
            let mut grads = vec![dx, dw];
            if ctx.inputs.len() == 3 {
                grads.push(
                    ctx.inputs[2]
                        .requires_grad()
                        .then(|| bias_grad(ctx.grad, cout, out_h * out_w)),
                );
            }
            grads
        }),
    ))
}
