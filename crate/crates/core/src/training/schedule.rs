use super::TrainConfig;

/// Triangular cyclic learning rate: a linear rise from `lr_min` to `lr_max`
/// over the first half of each cycle and a linear fall over the second.
/// A cycle spans `cycle_epochs · steps_per_epoch` optimizer steps.
pub fn cyclic_lr(step: u64, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let cycle = (cfg.cycle_epochs * steps_per_epoch.max(1)) as u64;
    let p = (step % cycle) as f64 / cycle as f64;
    let tri = 1.0 - (2.0 * p - 1.0).abs();
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * tri
}

/// Outcome of feeding one epoch's monitor value to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub stale_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = value.is_finite() && self.best.is_none_or(|b| value > b);
        if improved {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
        }
        StopDecision {
            improved,
            stop: self.stale_epochs >= self.patience,
        }
    }
}
