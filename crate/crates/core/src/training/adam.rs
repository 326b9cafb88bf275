use indexmap::IndexMap;

use crate::attnet::ModelParams;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: IndexMap<String, Vec<f32>>,
    pub v: IndexMap<String, Vec<f32>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start a new optimizer step; call once before the per-tensor updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of one tensor for the current step.
    pub fn update(&mut self, name: &str, param: &mut [f32], grad: &[f32], lr: f64) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape(
                "adam",
                format!("{name}: {} values but {} gradients", param.len(), grad.len()),
            ));
        }
        if self.step == 0 {
            return Err(Error::invalid("adam: begin_step must precede update"));
        }
        let n = param.len();
        let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n || v.len() != n {
            return Err(Error::shape("adam", format!("{name}: moment size changed")));
        }
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..n {
            let g = f64::from(grad[i]);
            let mi = ADAM_BETA1 * f64::from(m[i]) + (1.0 - ADAM_BETA1) * g;
            let vi = ADAM_BETA2 * f64::from(v[i]) + (1.0 - ADAM_BETA2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            param[i] = (f64::from(param[i]) - update) as f32;
        }
        Ok(())
    }
}

/// One optimizer step over every model parameter that received a gradient.
pub fn adam_step(
    model: &mut ModelParams,
    grads: &IndexMap<String, Vec<f32>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.begin_step();
    for (name, p) in model.params_mut() {
        if let Some(g) = grads.get(name) {
            state.update(name, &mut p.data, g, lr)?;
        }
    }
    Ok(())
}
