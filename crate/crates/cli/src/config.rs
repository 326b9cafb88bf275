//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use frontseg::attnet::ModelConfig;
use frontseg::training::{LossKind, Monitor, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "FRONTSEG_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    pub input_side: Option<usize>,
    pub attention_gates: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: Option<String>,
    pub w: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_min: Option<f64>,
    pub lr_max: Option<f64>,
    pub cycle_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub monitor: Option<String>,
    pub augment: Option<bool>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Flag values for `train`; `None` leaves the file or default value in place.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    pub input_side: Option<usize>,
    pub no_gates: bool,
    pub loss: Option<String>,
    pub w: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_min: Option<f64>,
    pub lr_max: Option<f64>,
    pub cycle_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub epochs: Option<usize>,
    pub monitor: Option<String>,
    pub no_augment: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// `FRONTSEG_SEED`, if set; a malformed value is a usage error.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// `bce`, `wbce` with a separate weight, or the combined `wbce_<w>` form.
fn parse_loss(name: &str, w: Option<f64>) -> Result<LossKind, CliError> {
    let loss = match (name, w) {
        ("bce", Some(_)) => return Err(CliError::Usage("--w only applies to the wbce loss".into())),
        ("wbce", None) => {
            return Err(CliError::Usage("the wbce loss needs a distance weight (--w 4, 8 or 16)".into()))
        }
        ("wbce", Some(w)) => format!("wbce_{w}").parse(),
        (other, None) => other.parse(),
        (other, Some(_)) => {
            return Err(CliError::Usage(format!("--w cannot be combined with loss {other:?}")))
        }
    };
    loss.map_err(|e: frontseg::Error| CliError::Usage(e.to_string()))
}

impl RunConfig {
    /// Merge and validate. `detected_side` fills the input side when neither
    /// the file nor the flags set it.
    pub fn resolve(
        file: FileConfig,
        flags: &Overrides,
        env_seed: Option<u64>,
        detected_side: impl FnOnce(&Path) -> Option<usize>,
    ) -> Result<Self, CliError> {
        let data = flags
            .data
            .clone()
            .or(file.data)
            .ok_or_else(|| CliError::Usage("no dataset given (--data or `data` in the config)".into()))?;
        let out = flags
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| CliError::Usage("no output directory given (--out or `out` in the config)".into()))?;
        let seed = flags.seed.or(file.seed).or(env_seed).unwrap_or(0);

        let m = &file.model;
        let defaults = ModelConfig::default();
        let input_side = match flags.input_side.or(m.input_side) {
            Some(s) => s,
            None => detected_side(&data).unwrap_or(defaults.input_side),
        };
        let model = ModelConfig {
            depth: flags.depth.or(m.depth).unwrap_or(defaults.depth),
            base_channels: flags.base_channels.or(m.base_channels).unwrap_or(defaults.base_channels),
            input_side,
            attention_gates: !flags.no_gates && m.attention_gates.unwrap_or(defaults.attention_gates),
            ..defaults
        };
        model.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let t = &file.train;
        let base = TrainConfig::default();
        // a weight given on the command line belongs to the loss named there, if any
        let (loss_name, w) = match (&flags.loss, flags.w) {
            (Some(l), w) => (l.clone(), w),
            (None, Some(w)) => (t.loss.clone().unwrap_or_else(|| "wbce".into()), Some(w)),
            (None, None) => (t.loss.clone().unwrap_or_else(|| "bce".into()), t.w),
        };
        let loss = parse_loss(&loss_name, w)?;
        let monitor = flags
            .monitor
            .as_ref()
            .or(t.monitor.as_ref())
            .map(|s| s.parse::<Monitor>())
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let train = TrainConfig {
            batch_size: flags.batch_size.or(t.batch_size).unwrap_or(base.batch_size),
            lr_min: flags.lr_min.or(t.lr_min).unwrap_or(base.lr_min),
            lr_max: flags.lr_max.or(t.lr_max).unwrap_or(base.lr_max),
            cycle_epochs: flags.cycle_epochs.or(t.cycle_epochs).unwrap_or(base.cycle_epochs),
            loss,
            patience: flags.patience.or(t.patience).unwrap_or(base.patience),
            max_epochs: flags.epochs.or(t.max_epochs).unwrap_or(base.max_epochs),
            seed,
            monitor,
            augment: !flags.no_augment && t.augment.unwrap_or(base.augment),
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        Ok(RunConfig {
            data,
            out,
            seed,
            model,
            train,
        })
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("data".to_string(), self.data.display().to_string()),
            ("out".to_string(), self.out.display().to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        kv.extend(self.model.to_kv());
        kv.extend(self.train.to_kv());
        kv
    }

    /// The `config.resolved` text: one `key=value` per line.
    pub fn resolved_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
