//! Exact Euclidean distance transform (lower envelope of parabolas, separable).

use ndarray::Array2;

use super::FrontMask;

/// Per-pixel Euclidean distance (in pixels) to the nearest foreground pixel.
///
/// Zero exactly on the foreground. A mask without foreground yields an
/// all-`+∞` field with `empty` set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub distances: Array2<f64>,
    pub empty: bool,
}

/// Squared distance transform of one line: `out[q] = min_p (q − p)² + f[p]`.
/// Infinite entries of `f` are not sites.
fn squared_dt_1d(f: &[f64], out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = sites.last() else {
                sites.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= *bounds.last().expect("parallel to sites") {
                sites.pop();
                bounds.pop();
            } else {
                sites.push(q);
                bounds.push(s);
                break;
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while k + 1 < sites.len() && bounds[k + 1] < qf {
            k += 1;
        }
        let p = sites[k];
        *o = (qf - p as f64).powi(2) + f[p];
    }
}

/// Distance transform of a raw grid; nonzero cells are foreground.
pub fn edt_grid(mask: &Array2<u8>) -> Array2<f64> {
    let (h, w) = mask.dim();
    let mut sq = mask.mapv(|v| if v != 0 { 0.0 } else { f64::INFINITY });
    let mut sites = Vec::new();
    let mut bounds = Vec::new();

    let mut line = vec![0.0; h];
    let mut out = vec![0.0; h];
    for x in 0..w {
        line.iter_mut().zip(sq.column(x)).for_each(|(l, &v)| *l = v);
        squared_dt_1d(&line, &mut out, &mut sites, &mut bounds);
        sq.column_mut(x).iter_mut().zip(&out).for_each(|(v, &o)| *v = o);
    }
    let mut line = vec![0.0; w];
    let mut out = vec![0.0; w];
    for y in 0..h {
        line.iter_mut().zip(sq.row(y)).for_each(|(l, &v)| *l = v);
        squared_dt_1d(&line, &mut out, &mut sites, &mut bounds);
        sq.row_mut(y).iter_mut().zip(&out).for_each(|(v, &o)| *v = o);
    }
    sq.mapv_inplace(f64::sqrt);
    sq
}

pub fn edt(mask: &FrontMask) -> DistanceField {
    let empty = mask.foreground() == 0;
    if empty {
        log::warn!("{}: distance transform of an empty mask", mask.id);
    }
    DistanceField {
        distances: edt_grid(&mask.pixels),
        empty,
    }
}
