use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};

/// 2×2 max pooling with stride 2. Ties go to the first element in row-major order.
pub fn max_pool2d(x: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "max_pool2d",
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best as u32);
            }
        }
    }
    let n = x.numel();
    Ok(Tensor::from_op(
        "max_pool2d",
        vec![b, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut dx = vec![0.0f32; n];
            for (&i, &g) in argmax.iter().zip(ctx.grad) {
                dx[i as usize] += g;
            }
            vec![Some(dx)]
        }),
    ))
}

/// One output coordinate of a linear resampling: `(1-t)·src[lo] + t·src[hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSample {
    pub lo: usize,
    pub hi: usize,
    pub t: f32,
}

/// Sampling table for resizing an axis from `src` to `dst` samples with the
/// half-pixel (align-corners = false) convention.
pub fn resample_axis(src: usize, dst: usize) -> Vec<AxisSample> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let t = if hi == lo { 0.0 } else { (pos - lo as f64) as f32 };
            AxisSample { lo, hi, t }
        })
        .collect()
}

/// Bilinear resize of every plane of `x [B,C,H,W]` to `out_h × out_w`.
pub fn bilinear_upsample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [b, c, h, w] = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_upsample: output size must be positive"));
    }
    let rows = resample_axis(h, out_h);
    let cols = resample_axis(w, out_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    for plane in xd.chunks(h * w) {
        for r in &rows {
            let (top, bottom) = (&plane[r.lo * w..][..w], &plane[r.hi * w..][..w]);
            for s in &cols {
                let upper = top[s.lo] + s.t * (top[s.hi] - top[s.lo]);
                let lower = bottom[s.lo] + s.t * (bottom[s.hi] - bottom[s.lo]);
                out.push(upper + r.t * (lower - upper));
            }
        }
    }
    let n = x.numel();
    Ok(Tensor::from_op(
        "bilinear_upsample",
        vec![b, c, out_h, out_w],
        out,
        vec![x.clone()],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut dx = vec![0.0f32; n];
            for (dplane, gplane) in dx.chunks_mut(h * w).zip(ctx.grad.chunks(out_h * out_w)) {
                for (r, grow) in rows.iter().zip(gplane.chunks(out_w)) {
                    for (s, &g) in cols.iter().zip(grow) {
                        let gt = g * (1.0 - r.t);
                        let gb = g * r.t;
                        dplane[r.lo * w + s.lo] += gt * (1.0 - s.t);
                        dplane[r.lo * w + s.hi] += gt * s.t;
                        dplane[r.hi * w + s.lo] += gb * (1.0 - s.t);
                        dplane[r.hi * w + s.hi] += gb * s.t;
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_maximum() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = max_pool2d(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn pooling_constant_grid_halves_it() {
        let x = Tensor::full(vec![2, 3, 6, 4], 1.25).unwrap();
        let y = max_pool2d(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 2]);
        assert!(y.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn pool_ties_route_to_first() {
        let x = Tensor::param(vec![1, 1, 2, 2], vec![5.0; 4]).unwrap();
        let y = max_pool2d(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_rejects_odd() {
        assert!(max_pool2d(&Tensor::zeros(vec![1, 1, 3, 4]).unwrap()).is_err());
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let x = Tensor::full(vec![1, 2, 3, 5], 0.3).unwrap();
        let y = bilinear_upsample(&x, 7, 11).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-7));
        let x = Tensor::new(vec![1, 1, 1, 1], vec![0.8]).unwrap();
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.8));
        assert!(bilinear_upsample(&x, 0, 4).is_err());
    }

    #[test]
    fn half_pixel_convention() {
        // 2 -> 4: outputs sit at source coordinates -0.25, 0.25, 0.75, 1.25.
        let axis = resample_axis(2, 4);
        assert_eq!(axis[0], AxisSample { lo: 0, hi: 1, t: 0.0 });
        assert_eq!(axis[1], AxisSample { lo: 0, hi: 1, t: 0.25 });
        assert_eq!(axis[2], AxisSample { lo: 0, hi: 1, t: 0.75 });
        assert_eq!(axis[3], AxisSample { lo: 1, hi: 1, t: 0.0 });
    }
}
