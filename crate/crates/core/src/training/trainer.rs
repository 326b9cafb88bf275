use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, cyclic_lr, evaluate, AdamState, EarlyStopping, Evaluation, LossKind, TrainConfig};
use crate::attnet::{Checkpoint, Mode, ModelParams};
use crate::data::{DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::imageproc::{augment_expand, FrontMask, SampleImage};
use crate::losses::{bce, wbce, weight_map, MetricsRecord};
use crate::tensor::Tensor;

/// A training sample flattened for batching.
struct Prepared {
    input: Vec<f32>,
    target: Vec<f32>,
    weights: Option<Vec<f32>>,
}

fn prepare(samples: &[(SampleImage, FrontMask)], loss: LossKind, side: usize) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|(img, mask)| {
            if img.dim() != (side, side) || mask.dim() != (side, side) {
                return Err(Error::invalid(format!(
                    "{}: expected {side}x{side} samples, got image {:?} and mask {:?}",
                    img.id,
                    img.dim(),
                    mask.dim()
                )));
            }
            let weights = match loss {
                LossKind::Bce => None,
                LossKind::Wbce(w) => Some(weight_map(mask, w)?.to_f32()),
            };
            Ok(Prepared {
                input: img.pixels.iter().copied().collect(),
                target: mask.pixels.iter().map(|&v| f32::from(v)).collect(),
                weights,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub record: MetricsRecord,
    pub evaluation: Evaluation,
    pub monitor: f64,
    pub improved: bool,
    pub stop: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<MetricsRecord>,
}

/// Owns the model, the optimizer state and the data of one training run.
pub struct Trainer {
    model: ModelParams,
    cfg: TrainConfig,
    adam: AdamState,
    train: Vec<Prepared>,
    val: Vec<(SampleImage, FrontMask)>,
    epoch: usize,
    stopper: EarlyStopping,
    best: ModelParams,
    history: Vec<MetricsRecord>,
    stopped: bool,
}

impl Trainer {
    pub fn new(
        model: ModelParams,
        train: &[(SampleImage, FrontMask)],
        val: Vec<(SampleImage, FrontMask)>,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid("training and validation splits must be non-empty"));
        }
        let expanded;
        let train = if cfg.augment {
            expanded = augment_expand(train)?;
            &expanded[..]
        } else {
            train
        };
        let side = model.config.input_side;
        let prepared = prepare(train, cfg.loss, side)?;
        prepare(&val, cfg.loss, side)?;
        Ok(Trainer {
            best: model.clone(),
            model,
            adam: AdamState::new(),
            train: prepared,
            val,
            epoch: 0,
            stopper: EarlyStopping::new(cfg.patience),
            history: Vec::new(),
            stopped: false,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn best(&self) -> &ModelParams {
        &self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.stopper.best_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.history
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.cfg.batch_size)
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.epoch >= self.cfg.max_epochs
    }

    /// One pass over the shuffled training set followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochOutcome> {
        let epoch = self.epoch + 1;
        let side = self.model.config.input_side;
        let plane = side * side;
        let spe = self.steps_per_epoch();

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let first_lr = cyclic_lr(self.adam.step, spe, &self.cfg);
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let lr = cyclic_lr(self.adam.step, spe, &self.cfg);
            let n = chunk.len();
            let gather = |f: &dyn Fn(&Prepared) -> &[f32]| -> Vec<f32> {
                chunk.iter().flat_map(|&i| f(&self.train[i]).iter().copied()).collect()
            };
            let shape = vec![n, 1, side, side];
            let x = Tensor::new(shape.clone(), gather(&|p| &p.input))?;
            let y = Tensor::new(shape.clone(), gather(&|p| &p.target))?;
            let leaves = self.model.leaves(true);
            let out = self.model.forward_with(&leaves, &x, Mode::Train)?;
            let loss = match self.cfg.loss {
                LossKind::Bce => bce(&out.probs, &y)?,
                LossKind::Wbce(_) => {
                    let w = Tensor::new(
                        shape,
                        gather(&|p| p.weights.as_deref().expect("prepared for wbce")),
                    )?;
                    wbce(&out.probs, &y, &w)?
                }
            };
            let value = f64::from(loss.item()?);
            if !value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {value} at epoch {epoch}, batch {}, lr {lr:e}",
                    b + 1
                )));
            }
            loss.backward()?;
            let grads: IndexMap<String, Vec<f32>> = leaves
                .iter()
                .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
                .collect();
            if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!(
                    "gradient of {name} at epoch {epoch}, batch {}, lr {lr:e}",
                    b + 1
                )));
            }
            adam_step(&mut self.model, &grads, &mut self.adam, lr)?;
            self.model.apply_batch_stats(&out.batch_stats)?;
            loss_sum += value * n as f64;
            seen += n;
            debug_assert_eq!(x.numel(), n * plane);
        }

        let evaluation = evaluate(&self.model, &self.val, self.cfg.loss)?;
        let monitor = self.cfg.resolved_monitor().value(&evaluation);
        let decision = self.stopper.observe(epoch, monitor);
        if decision.improved {
            self.best = self.model.clone();
        }
        let record = evaluation.to_record(epoch, first_lr, loss_sum / seen as f64);
        self.history.push(record);
        self.epoch = epoch;
        self.stopped = decision.stop;
        log::info!(
            "epoch={epoch} lr={first_lr:e} loss={:.6} monitor={monitor:.6}",
            record.train_loss
        );
        Ok(EpochOutcome {
            record,
            evaluation,
            monitor,
            improved: decision.improved,
            stop: decision.stop,
        })
    }

    /// Run until early stopping or the epoch limit; `on_epoch` sees every epoch.
    pub fn fit(
        mut self,
        mut on_epoch: impl FnMut(&Trainer, &EpochOutcome) -> Result<()>,
    ) -> Result<TrainOutcome> {
        while !self.is_finished() {
            let outcome = self.run_epoch()?;
            on_epoch(&self, &outcome)?;
        }
        Ok(self.into_outcome())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            best_epoch: self.stopper.best_epoch,
            best: self.best,
            history: self.history,
        }
    }

    /// Everything needed to continue this run: current and best model,
    /// optimizer moments, schedule position and metric history.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.meta.extend(self.cfg.to_kv());
        let s = &self.stopper;
        ck.meta.extend([
            ("state.epoch".to_string(), self.epoch.to_string()),
            ("state.adam_step".to_string(), self.adam.step.to_string()),
            (
                "state.best_monitor".to_string(),
                s.best.map_or("none".to_string(), |b| format!("{:016x}", b.to_bits())),
            ),
            ("state.best_epoch".to_string(), s.best_epoch.to_string()),
            ("state.stale_epochs".to_string(), s.stale_epochs.to_string()),
            ("state.stopped".to_string(), self.stopped.to_string()),
        ]);
        for (i, r) in self.history.iter().enumerate() {
            ck.meta.push((format!("history.{i}"), r.exact_row()));
        }
        for (name, m) in &self.adam.m {
            let shape = self.model.param(name).map_or(vec![m.len()], |p| p.shape.clone());
            ck.tensors.insert(
                format!("adam.m.{name}"),
                crate::attnet::ParamValue { shape: shape.clone(), data: m.clone() },
            );
            ck.tensors.insert(
                format!("adam.v.{name}"),
                crate::attnet::ParamValue { shape, data: self.adam.v[name].clone() },
            );
        }
        for (name, t) in self.best.to_checkpoint().tensors {
            ck.tensors.insert(format!("best.{name}"), t);
        }
        ck
    }

    /// Continue a run saved with [`Trainer::to_checkpoint`] on the same data.
    pub fn resume(
        ck: &Checkpoint,
        train: &[(SampleImage, FrontMask)],
        val: Vec<(SampleImage, FrontMask)>,
    ) -> Result<Self> {
        let model = ModelParams::from_checkpoint(ck)?;
        let cfg = TrainConfig::from_kv(&ck.meta)?;
        let mut t = Trainer::new(model, train, val, cfg)?;
        let meta = |k: &str| {
            ck.meta_value(k)
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))
        };
        let parse = |k: &str| -> Result<u64> {
            meta(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for {k}")))
        };
        t.epoch = parse("state.epoch")? as usize;
        t.adam.step = parse("state.adam_step")?;
        t.stopper.best = match meta("state.best_monitor")? {
            "none" => None,
            hex => Some(f64::from_bits(u64::from_str_radix(hex, 16).map_err(|_| {
                Error::Checkpoint("bad value for state.best_monitor".into())
            })?)),
        };
        t.stopper.best_epoch = parse("state.best_epoch")? as usize;
        t.stopper.stale_epochs = parse("state.stale_epochs")? as usize;
        t.stopped = meta("state.stopped")? == "true";
        t.history = (0..t.epoch)
            .map(|i| MetricsRecord::parse_csv_row(meta(&format!("history.{i}"))?))
            .collect::<Result<_>>()?;
        for (name, p) in t.model.params() {
            for (which, dst) in [("m", &mut t.adam.m), ("v", &mut t.adam.v)] {
                if let Some(v) = ck.tensors.get(&format!("adam.{which}.{name}")) {
                    if v.data.len() != p.data.len() {
                        return Err(Error::Checkpoint(format!("adam.{which}.{name} has wrong size")));
                    }
                    dst.insert(name.clone(), v.data.clone());
                }
            }
        }
        let best = Checkpoint {
            meta: ck.meta.clone(),
            tensors: ck
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("best.").map(|k| (k.to_string(), v.clone())))
                .collect(),
        };
        t.best = ModelParams::from_checkpoint(&best)?;
        Ok(t)
    }
}

/// Train on the `train` split of a dataset, validating on `val`.
pub fn train(model: ModelParams, dataset: &DatasetIndex, cfg: TrainConfig) -> Result<TrainOutcome> {
    let train = dataset.load_split(Split::Train)?;
    let val = dataset.load_split(Split::Val)?;
    Trainer::new(model, &train, val, cfg)?.fit(|_, _| Ok(()))
}
