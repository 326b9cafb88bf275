use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use frontseg::attnet::{build_model, extract_attention_maps, Checkpoint, ModelParams};
use frontseg::data::{
    load_dataset, preprocess_dataset, preprocess_image, preprocess_sample, split_dataset, synth_generate,
    write_dataset, DatasetIndex, PreprocessConfig, Split, SynthConfig, INDEX_FILE, STUDY_SPLIT,
};
use frontseg::imageproc::io::{dimensions, read_gray, read_mask, write_gray8, write_mask, write_rgb};
use frontseg::imageproc::{FrontMask, SampleImage};
use frontseg::losses::{MetricsRecord, METRICS_CSV_HEADER};
use frontseg::training::{self, evaluate, LossKind, Trainer};
use frontseg::Error;

use crate::config::RunConfig;
use crate::CliError;

pub const RESOLVED_FILE: &str = "config.resolved";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CKPT: &str = "model.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const ATTENTION_DIR: &str = "attention";
const MAX_EPOCHS_KEY: &str = "train.max_epochs";

/// Overlay colors: ground truth only, prediction only, both.
const GREEN: [u8; 3] = [0, 255, 0];
const RED: [u8; 3] = [255, 0, 0];
const YELLOW: [u8; 3] = [255, 255, 0];
const BACKGROUND: [u8; 3] = [0, 0, 0];

fn write_file(path: &Path, contents: &str) -> frontseg::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn synth(out: &Path, n: usize, side: usize, seed: u64) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let cfg = SynthConfig { side, seed, ..SynthConfig::default() };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if out.join(INDEX_FILE).exists() {
        return Err(CliError::Runtime(format!("{} already holds a dataset", out.display())));
    }
    let samples = synth_generate(&cfg, n)?;
    let index = write_dataset(out, &samples, &vec![Split::Train; n])?;
    let index = split_dataset(&index, STUDY_SPLIT, seed)?;
    index.write_csv()?;
    println!(
        "wrote {n} samples to {} (train={} val={} test={})",
        out.display(),
        index.count(Split::Train),
        index.count(Split::Val),
        index.count(Split::Test)
    );
    Ok(())
}

pub fn preprocess(data: &Path, out: &Path, size: usize, front_width: usize) -> Result<(), CliError> {
    if size == 0 || front_width == 0 {
        return Err(CliError::Usage("--size and --front-width must be positive".into()));
    }
    let index = preprocess_dataset(data, out, &PreprocessConfig { size, front_width })?;
    println!("preprocessed {} samples into {}", index.len(), out.display());
    Ok(())
}

/// Side of the first image of a dataset, when it is square.
pub fn detect_side(data: &Path) -> Option<usize> {
    let index = DatasetIndex::read_csv(data).ok()?;
    let first = index.entries.first()?;
    match dimensions(&index.root.join(&first.image)).ok()? {
        (h, w) if h == w => Some(h),
        _ => None,
    }
}

fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\n");
    for r in history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Attention maps of `model` on `probe` as `<dir>/<stem>_gate<l>.png`.
fn snapshot_attention(model: &ModelParams, probe: &SampleImage, dir: &Path, stem: &str) -> frontseg::Result<()> {
    let (_, maps) = training::predict(model, probe)?;
    let (side, _) = probe.dim();
    for (l, map) in extract_attention_maps(&maps, 0, side)?.iter().enumerate() {
        write_gray8(&dir.join(format!("{stem}_gate{}.png", l + 1)), map)?;
    }
    Ok(())
}

/// Every model and training key of the run, except the epoch limit, must
/// match the checkpoint being resumed.
fn check_resumable(cfg: &RunConfig, ck: &Checkpoint) -> Result<(), CliError> {
    let mut expected = cfg.model.to_kv();
    expected.extend(cfg.train.to_kv());
    for (key, value) in expected.into_iter().filter(|(k, _)| k != MAX_EPOCHS_KEY) {
        match ck.meta_value(&key) {
            Some(v) if v == value => {}
            found => {
                return Err(CliError::Usage(format!(
                    "cannot resume: {key} is {value} but the checkpoint has {}",
                    found.unwrap_or("nothing")
                )))
            }
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let out = &cfg.out;
    let last = out.join(LAST_CKPT);
    let resumed = if resume {
        let mut ck = Checkpoint::read(&last)?;
        check_resumable(cfg, &ck)?;
        // the limit may be raised to extend a finished run
        for (k, v) in ck.meta.iter_mut() {
            if k == MAX_EPOCHS_KEY {
                *v = cfg.train.max_epochs.to_string();
            }
        }
        Some(ck)
    } else {
        None
    };

    let index = load_dataset(&cfg.data)?;
    let train = index.load_split(Split::Train)?;
    let val = index.load_split(Split::Val)?;
    let probe = val
        .first()
        .map(|(img, _)| img.clone())
        .ok_or_else(|| CliError::Runtime(format!("{}: the val split is empty", cfg.data.display())))?;

    let attention = out.join(ATTENTION_DIR);
    create_dir(&attention)?;
    write_file(&out.join(RESOLVED_FILE), &cfg.resolved_text())?;

    let trainer = match &resumed {
        Some(ck) => Trainer::resume(ck, &train, val)?,
        None => Trainer::new(build_model(&cfg.model, cfg.seed)?, &train, val, cfg.train.clone())?,
    };
    if resumed.is_some() {
        log::info!("resuming after epoch {}", trainer.epoch());
    }
    let with_gates = cfg.model.attention_gates;
    let outcome = trainer.fit(|t, e| {
        let epoch = e.record.epoch;
        println!(
            "epoch={epoch} lr={:e} loss={:.6} monitor={:.6}",
            e.record.lr, e.record.train_loss, e.monitor
        );
        write_file(&out.join(METRICS_FILE), &metrics_csv(t.history()))?;
        if e.improved {
            t.best().save(&out.join(BEST_CKPT))?;
        }
        if with_gates {
            if epoch == 1 || epoch % 5 == 0 {
                snapshot_attention(t.model(), &probe, &attention, &format!("epoch{epoch:03}"))?;
            }
            if e.improved {
                snapshot_attention(t.best(), &probe, &attention, "best")?;
            }
        }
        t.to_checkpoint().write(&last)
    })?;

    // a resumed run that was already finished still leaves complete outputs
    write_file(&out.join(METRICS_FILE), &metrics_csv(&outcome.history))?;
    outcome.best.save(&out.join(BEST_CKPT))?;
    let best = outcome.best_epoch.checked_sub(1).and_then(|i| outcome.history.get(i));
    match best {
        Some(r) => println!("best_epoch={} dice={:.6} wdice_8={:.6}", r.epoch, r.dice, r.wdice_8),
        None => println!("best_epoch=none"),
    }
    Ok(())
}

pub fn eval(
    ckpt: &Path,
    data: &Path,
    split: Split,
    loss: Option<LossKind>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ck = Checkpoint::read(ckpt)?;
    let model = ModelParams::from_checkpoint(&ck)?;
    let loss = match loss {
        Some(l) => l,
        None => match ck.meta_value("train.loss") {
            Some(v) => v.parse()?,
            None => LossKind::Bce,
        },
    };
    let samples = load_dataset(data)?.load_split(split)?;
    if samples.is_empty() {
        return Err(CliError::Runtime(format!("{}: the {split} split is empty", data.display())));
    }
    let report = format!("split={split}\n{}", evaluate(&model, &samples, loss)?.report());
    print!("{report}");
    if let Some(path) = out {
        write_file(path, &report)?;
    }
    Ok(())
}

fn overlay(pred: &Array2<u8>, truth: &Array2<u8>) -> Vec<[u8; 3]> {
    pred.iter()
        .zip(truth)
        .map(|(&p, &t)| match (p != 0, t != 0) {
            (true, true) => YELLOW,
            (true, false) => RED,
            (false, true) => GREEN,
            (false, false) => BACKGROUND,
        })
        .collect()
}

pub fn predict(
    ckpt: &Path,
    image: &Path,
    mask: Option<&Path>,
    out: &Path,
    resolution: Option<f64>,
    front_width: usize,
) -> Result<(), CliError> {
    if resolution.is_some_and(|r| !(r.is_finite() && r > 0.0)) {
        return Err(CliError::Usage("--resolution must be a positive number of meters".into()));
    }
    let model = ModelParams::load(ckpt)?;
    let side = model.config.input_side;
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let pixels = read_gray(image)?;
    let raw_dim = pixels.dim();
    let truth = match mask {
        Some(path) => match read_mask(path)? {
            Ok(m) if m.dim() == raw_dim => Some(m),
            Ok(m) => {
                return Err(CliError::Runtime(format!(
                    "mask is {}x{} but the image is {}x{}",
                    m.dim().0,
                    m.dim().1,
                    raw_dim.0,
                    raw_dim.1
                )))
            }
            Err(v) => return Err(CliError::Runtime(format!("{}: non-binary mask value {v}", path.display()))),
        },
        None => None,
    };

    // images already at the network size are taken as preprocessed
    let (img, truth) = if raw_dim == (side, side) {
        (SampleImage::new(&id, pixels, resolution.unwrap_or(1.0))?, truth)
    } else {
        let res = resolution.ok_or_else(|| {
            CliError::Usage(format!(
                "the image is {}x{}, not {side}x{side}; --resolution is needed to preprocess it",
                raw_dim.0, raw_dim.1
            ))
        })?;
        let img = SampleImage::new(&id, pixels, res)?;
        let pc = PreprocessConfig { size: side, front_width };
        match truth {
            Some(m) => {
                let (img, m) = preprocess_sample(&img, &FrontMask::new(&id, m, res)?, &pc)?;
                (img, Some(m.pixels))
            }
            None => (preprocess_image(&img, &pc)?, None),
        }
    };

    create_dir(out)?;
    let (probs, maps) = training::predict(&model, &img)?;
    let binary = probs.mapv(|p| u8::from(p > 0.5));
    let mut written: Vec<PathBuf> = vec![out.join("prediction.png")];
    write_mask(&written[0], &binary)?;
    for (l, map) in extract_attention_maps(&maps, 0, side)?.iter().enumerate() {
        let path = out.join(format!("attention_gate{}.png", l + 1));
        write_gray8(&path, map)?;
        written.push(path);
    }
    if let Some(t) = truth {
        let path = out.join("overlay.png");
        write_rgb(&path, side, side, overlay(&binary, &t))?;
        written.push(path);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
