//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;
use crate::error::{Error, Result};

pub const GRAD_CHECK_STEP: f32 = 1e-3;
/// Inputs larger than this are checked on a random subsample of coordinates.
pub const GRAD_CHECK_MAX_COORDS: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `f` may return any tensor; non-scalar outputs are reduced with a fixed
/// random projection `Σ rᵢ·outᵢ` (seeded by `seed`) so every output
/// element contributes.
pub fn grad_check<F>(f: F, inputs: &[Tensor], seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape().to_vec(), t.data().to_vec()))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    let projection: Vec<f32> = if out.numel() == 1 {
        vec![1.0]
    } else {
        (0..out.numel())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    };
    out.backward_with(&projection)?;

    let objective = |xs: &[Tensor]| -> Result<f64> {
        let out = f(xs)?;
        let v: f64 = out
            .data()
            .iter()
            .zip(&projection)
            .map(|(&o, &r)| f64::from(o) * f64::from(r))
            .sum();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check objective".into()))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        if analytic.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("analytic gradient of input {i}")));
        }
        let coords: Vec<usize> = if leaf.numel() > GRAD_CHECK_MAX_COORDS {
            let mut c = sample(&mut rng, leaf.numel(), GRAD_CHECK_MAX_COORDS).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..leaf.numel()).collect()
        };
        for j in coords {
            let mut perturbed: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
            let base = inputs[i].data();
            let mut plus = base.to_vec();
            plus[j] += GRAD_CHECK_STEP;
            let mut minus = base.to_vec();
            minus[j] -= GRAD_CHECK_STEP;
            let span = f64::from(plus[j]) - f64::from(minus[j]);
            perturbed[i] = Tensor::new(inputs[i].shape().to_vec(), plus)?;
            let f_plus = objective(&perturbed)?;
            perturbed[i] = Tensor::new(inputs[i].shape().to_vec(), minus)?;
            let f_minus = objective(&perturbed)?;
            let numeric = (f_plus - f_minus) / span;
            let a = f64::from(analytic[j]);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}
