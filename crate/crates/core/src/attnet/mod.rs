//! Five-level U-Net with additive attention gates on every skip connection.
//!
//! Each encoder level runs two `5×5 conv → batch norm → leaky ReLU` blocks and
//! halves the resolution with max pooling. On the way up, the gate at level
//! `l` weighs the skip feature `enc[l-1]` using the decoder feature one scale
//! coarser as gating signal; the gated skip is concatenated with the
//! transposed-conv upsampling of that decoder feature.

mod checkpoint;
mod gate;

use indexmap::IndexMap;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageproc::resize_grid;
use crate::tensor::{
    activation, batch_norm2d, concat_channels, conv2d, max_pool2d, transposed_conv2d, Activation,
    BatchStats, Init, ParamSpec, RunningStats, Tensor,
};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gate::{attention_gate, AttentionGateParams, GateOutput};

pub const KERNEL_SIZE: usize = 5;
pub const LEAKY_SLOPE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of resolution levels, bottleneck included.
    pub depth: usize,
    pub base_channels: usize,
    pub input_side: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Without gates the skips are concatenated unchanged (plain U-Net).
    pub attention_gates: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 5,
            base_channels: 32,
            input_side: 512,
            in_channels: 1,
            out_channels: 1,
            attention_gates: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        let factor = 1usize << (self.depth - 1);
        if self.input_side == 0 || !self.input_side.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "input side {} is not divisible by {factor}",
                self.input_side
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Intermediate width of the gate acting on skip level `level`.
    pub fn f_int(&self, level: usize) -> usize {
        (self.channels(level) / 2).max(1)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("model.depth".into(), self.depth.to_string()),
            ("model.base_channels".into(), self.base_channels.to_string()),
            ("model.input_side".into(), self.input_side.to_string()),
            ("model.in_channels".into(), self.in_channels.to_string()),
            ("model.out_channels".into(), self.out_channels.to_string()),
            ("model.attention_gates".into(), self.attention_gates.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
            let raw = kv
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {raw:?} for {key}")))
        }
        let cfg = ModelConfig {
            depth: get(kv, "model.depth")?,
            base_channels: get(kv, "model.base_channels")?,
            input_side: get(kv, "model.input_side")?,
            in_channels: get(kv, "model.in_channels")?,
            out_channels: get(kv, "model.out_channels")?,
            attention_gates: get(kv, "model.attention_gates")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every learnable tensor in construction order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = KERNEL_SIZE;
        let mut specs = Vec::new();
        let block = |specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize| {
            for (i, cin) in [(1, cin), (2, cout)] {
                let p = format!("{prefix}.block{i}");
                specs.push(ParamSpec::new(
                    format!("{p}.conv.weight"),
                    [cout, cin, k, k],
                    Init::HeNormal { fan_in: cin * k * k },
                ));
                specs.push(ParamSpec::new(format!("{p}.bn.gamma"), [cout], Init::Ones));
                specs.push(ParamSpec::new(format!("{p}.bn.beta"), [cout], Init::Zeros));
            }
        };
        for l in 0..self.depth {
            let cin = if l == 0 { self.in_channels } else { self.channels(l - 1) };
            block(&mut specs, &format!("enc{l}"), cin, self.channels(l));
        }
        for l in (0..self.depth - 1).rev() {
            let (cx, cg, fi) = (self.channels(l), self.channels(l + 1), self.f_int(l));
            if self.attention_gates {
                let g = format!("gate{}", l + 1);
                specs.extend([
                    ParamSpec::new(format!("{g}.wx.weight"), [fi, cx, 1, 1], Init::HeNormal { fan_in: cx }),
                    ParamSpec::new(format!("{g}.wg.weight"), [fi, cg, 1, 1], Init::HeNormal { fan_in: cg }),
                    ParamSpec::new(format!("{g}.wg.bias"), [fi], Init::Zeros),
                    ParamSpec::new(format!("{g}.psi.weight"), [1, fi, 1, 1], Init::HeNormal { fan_in: fi }),
                    ParamSpec::new(format!("{g}.psi.bias"), [1], Init::Zeros),
                ]);
            }
            specs.push(ParamSpec::new(
                format!("up{l}.weight"),
                [cg, cx, 2, 2],
                Init::HeNormal { fan_in: cg },
            ));
            specs.push(ParamSpec::new(format!("up{l}.bias"), [cx], Init::Zeros));
            block(&mut specs, &format!("dec{l}"), 2 * cx, cx);
        }
        let c0 = self.channels(0);
        specs.push(ParamSpec::new(
            "head.weight",
            [self.out_channels, c0, 1, 1],
            Init::HeNormal { fan_in: c0 },
        ));
        specs.push(ParamSpec::new("head.bias", [self.out_channels], Init::Zeros));
        specs
    }

    /// Names and widths of the batch-norm layers.
    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for l in 0..self.depth {
            for i in 1..=2 {
                out.push((format!("enc{l}.block{i}.bn"), self.channels(l)));
            }
        }
        for l in (0..self.depth - 1).rev() {
            for i in 1..=2 {
                out.push((format!("dec{l}.block{i}.bn"), self.channels(l)));
            }
        }
        out
    }

    /// Total number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }
}

/// Stored value of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamValue {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; parameters are gradient leaves.
    Train,
    /// Running statistics; no graph is recorded.
    Eval,
}

/// Attention coefficients of one forward pass; index `l − 1` holds gate `l`.
/// Arrays are `[batch, side, side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub native: Vec<Array3<f32>>,
    pub upsampled: Vec<Array3<f32>>,
}

impl AttentionMaps {
    pub fn is_empty(&self) -> bool {
        self.native.is_empty()
    }
}

/// Resize every gate's map for batch element `sample` to `out_side × out_side`.
pub fn extract_attention_maps(
    maps: &AttentionMaps,
    sample: usize,
    out_side: usize,
) -> Result<Vec<Array2<f32>>> {
    if out_side == 0 {
        return Err(Error::invalid("output side must be positive"));
    }
    maps.native
        .iter()
        .map(|m| {
            if sample >= m.dim().0 {
                return Err(Error::invalid(format!(
                    "sample {sample} out of range for batch of {}",
                    m.dim().0
                )));
            }
            let plane = m.index_axis(ndarray::Axis(0), sample).to_owned();
            Ok(resize_grid(&plane, out_side, out_side))
        })
        .collect()
}

fn planes(t: &Tensor) -> Result<Array3<f32>> {
    let [b, c, h, w] = t.dims4()?;
    debug_assert_eq!(c, 1);
    Ok(Array3::from_shape_vec((b, h, w), t.data().to_vec()).expect("shape from dims4"))
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// Probabilities `[B, out_channels, S, S]`.
    pub probs: Tensor,
    pub attention: AttentionMaps,
    /// Batch statistics per batch-norm layer (train mode only).
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Parameters and batch-norm buffers of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    params: IndexMap<String, ParamValue>,
    running: IndexMap<String, RunningStats>,
}

/// Initialize a network; the same seed always gives the same parameters.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = config
        .param_specs()
        .into_iter()
        .map(|s| {
            let data = s.sample(&mut rng);
            (s.name, ParamValue { shape: s.shape, data })
        })
        .collect();
    let running = config
        .bn_layers()
        .into_iter()
        .map(|(name, c)| (name, RunningStats::new(c)))
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        params,
        running,
    })
}

struct Ctx<'a> {
    leaves: &'a IndexMap<String, Tensor>,
    running: &'a IndexMap<String, RunningStats>,
    training: bool,
    stats: Vec<(String, BatchStats)>,
}

impl Ctx<'_> {
    fn p(&self, name: &str) -> Result<&Tensor> {
        self.leaves
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    fn block(&mut self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let mut h = x.clone();
        for i in 1..=2 {
            let p = format!("{prefix}.block{i}");
            h = conv2d(&h, self.p(&format!("{p}.conv.weight"))?, None, 1, KERNEL_SIZE / 2)?;
            let bn = format!("{p}.bn");
            let running = self
                .running
                .get(&bn)
                .ok_or_else(|| Error::invalid(format!("missing buffers of {bn}")))?;
            let (y, stats) = batch_norm2d(
                &h,
                self.p(&format!("{bn}.gamma"))?,
                self.p(&format!("{bn}.beta"))?,
                running,
                self.training,
            )?;
            if let Some(s) = stats {
                self.stats.push((bn, s));
            }
            h = activation(&y, Activation::LeakyRelu(LEAKY_SLOPE))?;
        }
        Ok(h)
    }
}

impl ModelParams {
    pub fn params(&self) -> &IndexMap<String, ParamValue> {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamValue)> {
        self.params.iter_mut()
    }

    pub fn param(&self, name: &str) -> Option<&ParamValue> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ParamValue> {
        self.params.get_mut(name)
    }

    pub fn running_stats(&self) -> &IndexMap<String, RunningStats> {
        &self.running
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Fold one training step's batch statistics into the running buffers.
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (name, s) in stats {
            self.running
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("unknown batch-norm layer {name}")))?
                .update(s);
        }
        Ok(())
    }

    /// The same network with the gates removed and skips passed through.
    pub fn without_gates(&self) -> ModelParams {
        let mut out = self.clone();
        out.config.attention_gates = false;
        out.params.retain(|k, _| !k.starts_with("gate"));
        out
    }

    /// Parameter tensors for one forward pass.
    pub fn leaves(&self, requires_grad: bool) -> IndexMap<String, Tensor> {
        self.params
            .iter()
            .map(|(k, v)| {
                let t = if requires_grad {
                    Tensor::param(v.shape.clone(), v.data.clone())
                } else {
                    Tensor::new(v.shape.clone(), v.data.clone())
                };
                (k.clone(), t.expect("stored shapes are consistent"))
            })
            .collect()
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        self.forward_with(&self.leaves(mode == Mode::Train), batch, mode)
    }

    /// Forward pass using caller-provided parameter tensors.
    pub fn forward_with(
        &self,
        leaves: &IndexMap<String, Tensor>,
        batch: &Tensor,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let [_, c, h, w] = batch.dims4()?;
        if c != cfg.in_channels || h != cfg.input_side || w != cfg.input_side {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected [B, {}, {s}, {s}], got {:?}",
                    cfg.in_channels,
                    batch.shape(),
                    s = cfg.input_side
                ),
            ));
        }
        let mut ctx = Ctx {
            leaves,
            running: &self.running,
            training: mode == Mode::Train,
            stats: Vec::new(),
        };

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut x = batch.clone();
        for l in 0..cfg.depth {
            if l > 0 {
                x = max_pool2d(&x)?;
            }
            x = ctx.block(&x, &format!("enc{l}"))?;
            skips.push(x.clone());
        }

        let mut native = vec![None; cfg.depth - 1];
        let mut d = skips.pop().expect("depth >= 2");
        for l in (0..cfg.depth - 1).rev() {
            let skip = &skips[l];
            let gated = if cfg.attention_gates {
                let g = format!("gate{}", l + 1);
                let out = attention_gate(
                    skip,
                    &d,
                    AttentionGateParams {
                        wx: ctx.p(&format!("{g}.wx.weight"))?,
                        wg: ctx.p(&format!("{g}.wg.weight"))?,
                        bg: ctx.p(&format!("{g}.wg.bias"))?,
                        psi: ctx.p(&format!("{g}.psi.weight"))?,
                        bpsi: ctx.p(&format!("{g}.psi.bias"))?,
                    },
                )?;
                native[l] = Some(planes(&out.alpha_native)?);
                out.x_hat
            } else {
                skip.clone()
            };
            let up = transposed_conv2d(
                &d,
                ctx.p(&format!("up{l}.weight"))?,
                Some(ctx.p(&format!("up{l}.bias"))?),
                2,
                0,
            )?;
            d = ctx.block(&concat_channels(&[&gated, &up])?, &format!("dec{l}"))?;
        }
        let logits = conv2d(&d, ctx.p("head.weight")?, Some(ctx.p("head.bias")?), 1, 0)?;
        let probs = activation(&logits, Activation::Sigmoid)?;

        let native: Vec<Array3<f32>> = native.into_iter().flatten().collect();
        let side = cfg.input_side;
        let upsampled = native
            .iter()
            .map(|m| {
                let mut out = Array3::zeros((m.dim().0, side, side));
                for (src, mut dst) in m.outer_iter().zip(out.outer_iter_mut()) {
                    dst.assign(&resize_grid(&src.to_owned(), side, side));
                }
                out
            })
            .collect();
        Ok(ForwardOutput {
            probs,
            attention: AttentionMaps { native, upsampled },
            batch_stats: ctx.stats,
        })
    }

    /// Serialize parameters and buffers, plus caller-provided extras.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            meta: self.config.to_kv(),
            tensors: IndexMap::new(),
        };
        for (k, v) in &self.params {
            ck.tensors.insert(k.clone(), v.clone());
        }
        for (k, r) in &self.running {
            let c = r.channels();
            ck.tensors.insert(
                format!("{k}.running_mean"),
                ParamValue { shape: vec![c], data: r.mean.clone() },
            );
            ck.tensors.insert(
                format!("{k}.running_var"),
                ParamValue { shape: vec![c], data: r.var.clone() },
            );
        }
        ck
    }

    /// Restore a network; tensors not belonging to the model are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<ModelParams> {
        let config = ModelConfig::from_kv(&ck.meta)?;
        let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = ck
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t.data.clone())
        };
        let mut params = IndexMap::new();
        for s in config.param_specs() {
            let data = fetch(&s.name, &s.shape)?;
            params.insert(s.name, ParamValue { shape: s.shape, data });
        }
        let mut running = IndexMap::new();
        for (name, c) in config.bn_layers() {
            let mean = fetch(&format!("{name}.running_mean"), &[c])?;
            let var = fetch(&format!("{name}.running_var"), &[c])?;
            running.insert(name, RunningStats { mean, var });
        }
        Ok(ModelParams {
            config,
            params,
            running,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<ModelParams> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
