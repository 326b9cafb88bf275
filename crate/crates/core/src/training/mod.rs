//! Optimization loop: Adam with a cyclic learning rate, early stopping on a
//! validation metric, evaluation passes and resumable checkpoints.

mod adam;
mod eval;
mod schedule;
mod trainer;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::DISTANCE_WEIGHTS;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use eval::{evaluate, predict, Evaluation};
pub use schedule::{cyclic_lr, EarlyStopping, StopDecision};
pub use trainer::{train, EpochOutcome, TrainOutcome, Trainer};

fn check_weight(w: f64) -> Result<f64> {
    if DISTANCE_WEIGHTS.contains(&w) {
        Ok(w)
    } else {
        Err(Error::invalid(format!("distance weight must be one of 4, 8, 16; got {w}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Bce,
    /// Distance-weighted BCE with weight `w`.
    Wbce(f64),
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Bce => f.write_str("bce"),
            LossKind::Wbce(w) => write!(f, "wbce_{w}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    /// `bce`, or `wbce_<w>` with `w ∈ {4, 8, 16}`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            _ => {
                let w = s
                    .strip_prefix("wbce_")
                    .and_then(|w| w.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown loss {s:?}")))?;
                Ok(LossKind::Wbce(check_weight(w)?))
            }
        }
    }
}

/// Validation metric driving early stopping and best-model selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Monitor {
    Dice,
    WDice(f64),
}

impl Monitor {
    /// The metric matching a loss: Dice for BCE, WDice_w for WBCE_w.
    pub fn paired_with(loss: LossKind) -> Self {
        match loss {
            LossKind::Bce => Monitor::Dice,
            LossKind::Wbce(w) => Monitor::WDice(w),
        }
    }

    pub fn value(&self, e: &Evaluation) -> f64 {
        match *self {
            Monitor::Dice => e.dice,
            Monitor::WDice(w) => e.wdice(w).expect("validated weight"),
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Monitor::Dice => f.write_str("dice"),
            Monitor::WDice(w) => write!(f, "wdice_{w}"),
        }
    }
}

impl FromStr for Monitor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(Monitor::Dice),
            _ => {
                let w = s
                    .strip_prefix("wdice_")
                    .and_then(|w| w.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown monitor {s:?}")))?;
                Ok(Monitor::WDice(check_weight(w)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Epochs per learning-rate cycle (half rising, half falling).
    pub cycle_epochs: usize,
    pub loss: LossKind,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// `None` pairs the monitor with the loss.
    pub monitor: Option<Monitor>,
    /// Expand the training split with its 8 flip/rotation variants.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 5,
            lr_min: 1e-5,
            lr_max: 1e-3,
            cycle_epochs: 8,
            loss: LossKind::Bce,
            patience: 20,
            max_epochs: 200,
            seed: 0,
            monitor: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            )));
        }
        if self.cycle_epochs < 2 || !self.cycle_epochs.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "cycle length must be a positive even number of epochs, got {}",
                self.cycle_epochs
            )));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max epochs must be at least 1"));
        }
        if let LossKind::Wbce(w) = self.loss {
            check_weight(w)?;
        }
        if let Some(Monitor::WDice(w)) = self.monitor {
            check_weight(w)?;
        }
        Ok(())
    }

    pub fn resolved_monitor(&self) -> Monitor {
        self.monitor.unwrap_or(Monitor::paired_with(self.loss))
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.lr_min".into(), format!("{:e}", self.lr_min)),
            ("train.lr_max".into(), format!("{:e}", self.lr_max)),
            ("train.cycle_epochs".into(), self.cycle_epochs.to_string()),
            ("train.loss".into(), self.loss.to_string()),
            ("train.patience".into(), self.patience.to_string()),
            ("train.max_epochs".into(), self.max_epochs.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.monitor".into(), self.resolved_monitor().to_string()),
            ("train.augment".into(), self.augment.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        fn get<T: FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
            let raw = kv
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
        }
        let cfg = TrainConfig {
            batch_size: get(kv, "train.batch_size")?,
            lr_min: get(kv, "train.lr_min")?,
            lr_max: get(kv, "train.lr_max")?,
            cycle_epochs: get(kv, "train.cycle_epochs")?,
            loss: get(kv, "train.loss")?,
            patience: get(kv, "train.patience")?,
            max_epochs: get(kv, "train.max_epochs")?,
            seed: get(kv, "train.seed")?,
            monitor: Some(get(kv, "train.monitor")?),
            augment: get(kv, "train.augment")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_follows_loss() {
        let cfg = TrainConfig {
            loss: LossKind::Wbce(8.0),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.resolved_monitor().to_string(), "wdice_8");
        assert_eq!(TrainConfig::default().resolved_monitor(), Monitor::Dice);
    }

    #[test]
    fn parse_loss_and_monitor() {
        assert_eq!("wbce_16".parse::<LossKind>().unwrap(), LossKind::Wbce(16.0));
        assert_eq!("bce".parse::<LossKind>().unwrap(), LossKind::Bce);
        assert!("wbce_5".parse::<LossKind>().is_err());
        assert!("mse".parse::<LossKind>().is_err());
        assert_eq!("wdice_4".parse::<Monitor>().unwrap(), Monitor::WDice(4.0));
        assert_eq!(LossKind::Wbce(4.0).to_string().parse::<LossKind>().unwrap(), LossKind::Wbce(4.0));
    }

    #[test]
    fn validation_rules() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { lr_min: 1e-3, lr_max: 1e-5, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { cycle_epochs: 3, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { loss: LossKind::Wbce(5.0), ..ok }.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let cfg = TrainConfig {
            loss: LossKind::Wbce(16.0),
            seed: 99,
            augment: false,
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back.resolved_monitor(), cfg.resolved_monitor());
        assert_eq!(TrainConfig { monitor: None, ..back }, cfg);
    }
}
