//! Dataset directories, deterministic splits, preprocessing and a synthetic
//! SAR-like front generator.
//!
//! A dataset lives in one directory:
//!
//! ```text
//! index.csv        id,image,mask,resolution_m,split
//! images/<id>.png  grayscale intensities
//! masks/<id>.png   front = 255, background = 0
//! ```

mod preprocess;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadIssue, Result};
use crate::imageproc::{self, FrontMask, SampleImage};

pub use preprocess::{preprocess_dataset, preprocess_image, preprocess_sample, PreprocessConfig};
pub use synth::{synth_generate, synth_sample, SynthConfig, SYNTH_MIN_SIDE};

pub const INDEX_FILE: &str = "index.csv";

/// Train/validation/test counts of the original study.
pub const STUDY_SPLIT: [f64; 3] = [144.0, 50.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

/// One row of `index.csv`; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub resolution_m: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn load_sample(&self, entry: &IndexEntry) -> Result<(SampleImage, FrontMask)> {
        let img_path = self.root.join(&entry.image);
        let mask_path = self.root.join(&entry.mask);
        let pixels = imageproc::io::read_gray(&img_path)?;
        let mask = imageproc::io::read_mask(&mask_path)?.map_err(|v| {
            Error::Load(vec![LoadIssue {
                id: entry.id.clone(),
                reason: format!("non-binary mask (value {v})"),
            }])
        })?;
        Ok((
            SampleImage::new(entry.id.clone(), pixels, entry.resolution_m)?,
            FrontMask::new(entry.id.clone(), mask, entry.resolution_m)?,
        ))
    }

    /// Load every sample of a split, in index order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(SampleImage, FrontMask)>> {
        self.split(split).map(|e| self.load_sample(e)).collect()
    }

    pub fn write_csv(&self) -> Result<()> {
        let path = self.root.join(INDEX_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for e in &self.entries {
            w.serialize(e).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read_csv(root: &Path) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let entries = r
            .deserialize()
            .collect::<std::result::Result<Vec<IndexEntry>, _>>()
            .map_err(|e| csv_error(&path, e))?;
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            entries,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => return Error::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    }
    Error::invalid(format!("{}: {e}", path.display()))
}

/// Read `index.csv` and check every entry: unique id, readable files,
/// matching image/mask extents, binary and non-empty mask.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    let index = DatasetIndex::read_csv(root)?;
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for e in &index.entries {
        let mut issue = |reason: String| {
            issues.push(LoadIssue {
                id: e.id.clone(),
                reason,
            })
        };
        if !seen.insert(e.id.as_str()) {
            issue("duplicate id".into());
            continue;
        }
        if !(e.resolution_m > 0.0 && e.resolution_m.is_finite()) {
            issue(format!("invalid resolution {}", e.resolution_m));
        }
        let img_path = root.join(&e.image);
        let mask_path = root.join(&e.mask);
        let img_dim = match imageproc::io::dimensions(&img_path) {
            Ok(d) => d,
            Err(err) => {
                issue(format!("image: {err}"));
                continue;
            }
        };
        match imageproc::io::read_mask(&mask_path) {
            Err(err) => issue(format!("mask: {err}")),
            Ok(Err(v)) => issue(format!("non-binary mask (value {v})")),
            Ok(Ok(m)) if m.dim() != img_dim => issue(format!(
                "image is {}x{} but mask is {}x{}",
                img_dim.0,
                img_dim.1,
                m.dim().0,
                m.dim().1
            )),
            Ok(Ok(m)) if !m.iter().any(|&v| v != 0) => issue("empty mask".into()),
            Ok(Ok(_)) => {}
        }
    }
    if issues.is_empty() {
        Ok(index)
    } else {
        Err(Error::Load(issues))
    }
}

/// Largest-remainder apportionment of `n` samples to three proportions.
/// Proportions summing to `n` are reproduced exactly.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || total <= 0.0 {
        return Err(Error::invalid(format!("invalid split ratios {ratios:?}")));
    }
    let quotas = ratios.map(|r| r * n as f64 / total);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0usize, 1, 2];
    // Ties go to the earlier split.
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Reassign splits with a seeded shuffle.
pub fn split_dataset(index: &DatasetIndex, ratios: [f64; 3], seed: u64) -> Result<DatasetIndex> {
    let n = index.len();
    let counts = split_counts(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut entries = index.entries.clone();
    let labels = Split::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&s, c)| std::iter::repeat_n(s, c));
    for (&i, s) in order.iter().zip(labels) {
        entries[i].split = s;
    }
    Ok(DatasetIndex {
        root: index.root.clone(),
        entries,
    })
}

fn create_layout(root: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn write_sample(root: &Path, img: &SampleImage, mask: &FrontMask, split: Split) -> Result<IndexEntry> {
    let image = PathBuf::from("images").join(format!("{}.png", img.id));
    let mask_rel = PathBuf::from("masks").join(format!("{}.png", img.id));
    imageproc::io::write_gray16(&root.join(&image), &img.pixels)?;
    imageproc::io::write_mask(&root.join(&mask_rel), &mask.pixels)?;
    Ok(IndexEntry {
        id: img.id.clone(),
        image,
        mask: mask_rel,
        resolution_m: img.resolution_m,
        split,
    })
}

/// Write samples as `images/<id>.png` (16-bit) and `masks/<id>.png`, plus `index.csv`.
pub fn write_dataset(
    root: &Path,
    samples: &[(SampleImage, FrontMask)],
    splits: &[Split],
) -> Result<DatasetIndex> {
    if splits.len() != samples.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} split labels",
            samples.len(),
            splits.len()
        )));
    }
    create_layout(root)?;
    let entries = samples
        .iter()
        .zip(splits)
        .map(|((img, mask), &split)| write_sample(root, img, mask, split))
        .collect::<Result<_>>()?;
    let index = DatasetIndex {
        root: root.to_path_buf(),
        entries,
    };
    index.write_csv()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tiny(n: usize) -> Vec<(SampleImage, FrontMask)> {
        (0..n)
            .map(|i| {
                let id = format!("s{i}");
                let mut m = Array2::zeros((8, 8));
                m.row_mut(i % 8).fill(1u8);
                (
                    SampleImage::new(&id, Array2::from_elem((8, 8), 0.5), 40.0).unwrap(),
                    FrontMask::new(&id, m, 40.0).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn split_counts_examples() {
        assert_eq!(split_counts(244, STUDY_SPLIT).unwrap(), [144, 50, 50]);
        assert_eq!(split_counts(10, STUDY_SPLIT).unwrap(), [6, 2, 2]);
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(split_counts(0, STUDY_SPLIT).unwrap(), [0, 0, 0]);
        assert!(split_counts(5, [0.0, 0.0, 0.0]).is_err());
        assert!(split_counts(5, [-1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let idx = write_dataset(dir.path(), &tiny(10), &[Split::Train; 10]).unwrap();
        let a = split_dataset(&idx, STUDY_SPLIT, 4).unwrap();
        let b = split_dataset(&idx, STUDY_SPLIT, 4).unwrap();
        let c = split_dataset(&idx, STUDY_SPLIT, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!([a.count(Split::Train), a.count(Split::Val), a.count(Split::Test)], [6, 2, 2]);
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let samples = tiny(3);
        write_dataset(dir.path(), &samples, &[Split::Train, Split::Val, Split::Test]).unwrap();
        let idx = load_dataset(dir.path()).unwrap();
        assert_eq!(idx.len(), 3);
        let (img, mask) = idx.load_sample(&idx.entries[1]).unwrap();
        assert_eq!(mask.pixels, samples[1].1.pixels);
        assert!((img.pixels[[0, 0]] - 0.5).abs() < 1e-4);
        assert_eq!(idx.load_split(Split::Test).unwrap().len(), 1);
    }

    #[test]
    fn itemized_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &tiny(3), &[Split::Train; 3]).unwrap();
        // s0: non-binary mask; s1: size mismatch; s2: missing image
        let bad = image::GrayImage::from_raw(8, 8, vec![37; 64]).unwrap();
        bad.save(dir.path().join("masks/s0.png")).unwrap();
        imageproc::io::write_mask(&dir.path().join("masks/s1.png"), &Array2::ones((4, 8))).unwrap();
        std::fs::remove_file(dir.path().join("images/s2.png")).unwrap();
        let Err(Error::Load(issues)) = load_dataset(dir.path()) else {
            panic!("expected load issues");
        };
        assert_eq!(issues.len(), 3);
        assert_eq!(issues[0].id, "s0");
        assert!(issues[0].reason.contains("non-binary mask"));
        assert_eq!(issues[1].id, "s1");
        assert!(issues[1].reason.contains("8x8 but mask is 4x8"));
        assert_eq!(issues[2].id, "s2");
    }

    #[test]
    fn missing_index_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn split_names() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("bogus".parse::<Split>().is_err());
        assert_eq!(Split::Test.to_string(), "test");
    }
}
