//! `frontseg`: synthesize, preprocess, train, evaluate and run the attention U-Net.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frontseg::data::Split;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration, detected before any work starts.
    Usage(String),
    Runtime(String),
}

impl From<frontseg::Error> for CliError {
    fn from(e: frontseg::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "frontseg", version, about = "Calving-front segmentation with an attention U-Net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic SAR-like dataset split 144:50:50.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 512)]
        side: usize,
        /// Defaults to $FRONTSEG_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Despeckle, pad, resize and thicken fronts into a new dataset.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value_t = 6)]
        front_width: usize,
    },
    /// Train on the train split, validating on val.
    Train(TrainArgs),
    /// Print the metric report of a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Loss for the reported loss value; defaults to the one the checkpoint was trained with.
        #[arg(long)]
        loss: Option<String>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one image and export its attention maps.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth front for the overlay.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Pixel spacing in meters; required when the image still needs preprocessing.
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long, default_value_t = 6)]
        front_width: usize,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML file with `data`, `out`, `seed`, `[model]` and `[train]` entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from `<out>/last.ckpt`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// `bce`, `wbce` (with --w) or `wbce_<w>`.
    #[arg(long)]
    loss: Option<String>,
    /// Distance weight of the wbce loss: 4, 8 or 16.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    monitor: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    cycle_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    input_side: Option<usize>,
    /// Plain U-Net: concatenate skips without attention gates.
    #[arg(long)]
    no_gates: bool,
}

impl TrainArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            data: self.data.clone(),
            out: self.out.clone(),
            seed: self.seed,
            depth: self.depth,
            base_channels: self.base_channels,
            input_side: self.input_side,
            no_gates: self.no_gates,
            loss: self.loss.clone(),
            w: self.w,
            batch_size: self.batch_size,
            lr_min: self.lr_min,
            lr_max: self.lr_max,
            cycle_epochs: self.cycle_epochs,
            patience: self.patience,
            epochs: self.epochs,
            monitor: self.monitor.clone(),
            no_augment: self.no_augment,
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: frontseg::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, n, side, seed } => {
            let seed = match seed {
                Some(s) => s,
                None => config::env_seed()?.unwrap_or(0),
            };
            commands::synth(&out, n, side, seed)
        }
        Command::Preprocess { data, out, size, front_width } => {
            commands::preprocess(&data, &out, size, front_width)
        }
        Command::Train(args) => {
            let file = match &args.config {
                Some(p) => config::FileConfig::read(p)?,
                None => config::FileConfig::default(),
            };
            let cfg = config::RunConfig::resolve(file, &args.overrides(), config::env_seed()?, commands::detect_side)?;
            commands::train(&cfg, args.resume)
        }
        Command::Eval { ckpt, data, split, loss, out } => {
            let loss = loss
                .map(|l| l.parse().map_err(|e: frontseg::Error| CliError::Usage(e.to_string())))
                .transpose()?;
            commands::eval(&ckpt, &data, split, loss, out.as_deref())
        }
        Command::Predict { ckpt, image, mask, out, resolution, front_width } => {
            commands::predict(&ckpt, &image, mask.as_deref(), &out, resolution, front_width)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("frontseg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
