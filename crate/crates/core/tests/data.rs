use std::collections::{HashSet, VecDeque};

use ndarray::Array2;

use frontseg::data::{
    load_dataset, preprocess_dataset, split_dataset, synth_generate, synth_sample, write_dataset,
    DatasetIndex, PreprocessConfig, Split, SynthConfig, INDEX_FILE, STUDY_SPLIT,
};
use frontseg::imageproc::io::{write_gray8, write_mask};
use frontseg::losses::imbalance_ratio;
use frontseg::Error;

fn four_connected(mask: &Array2<u8>) -> bool {
    let (h, w) = mask.dim();
    let Some((start, _)) = mask.indexed_iter().find(|(_, &v)| v != 0) else {
        return false;
    };
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some((r, c)) = queue.pop_front() {
        let next = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
        for (nr, nc) in next {
            if nr < h && nc < w && mask[[nr, nc]] != 0 && seen.insert((nr, nc)) {
                queue.push_back((nr, nc));
            }
        }
    }
    seen.len() == mask.iter().filter(|&&v| v != 0).count()
}

fn has_2x2_block(mask: &Array2<u8>) -> bool {
    mask.windows((2, 2)).into_iter().any(|w| w.iter().all(|&v| v != 0))
}

#[test]
fn synthetic_fronts_at_full_size() {
    let cfg = SynthConfig { seed: 21, ..SynthConfig::default() };
    for i in 0..4 {
        let (img, mask) = synth_sample(&cfg, i).unwrap();
        assert_eq!(img.dim(), (512, 512));
        assert!(img.pixels.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let (lo, hi) = cfg.resolution_range_m;
        assert!((lo..=hi).contains(&img.resolution_m));
        let m = &mask.pixels;
        assert!(m.columns().into_iter().all(|c| c.iter().any(|&v| v != 0)), "front spans every column");
        assert!(four_connected(m));
        assert!(!has_2x2_block(m));
        let ratio = imbalance_ratio(&mask).unwrap();
        assert!(ratio > 400.0, "sample {i}: ratio {ratio}");
    }
}

#[test]
fn synthetic_stream_is_seeded_per_index() {
    let cfg = SynthConfig { side: 48, seed: 3, ..SynthConfig::default() };
    let batch = synth_generate(&cfg, 5).unwrap();
    let (img, mask) = synth_sample(&cfg, 3).unwrap();
    assert_eq!(batch[3].0, img);
    assert_eq!(batch[3].1, mask);
    assert_eq!(img.id, "synth_0003");
    let other = synth_sample(&SynthConfig { seed: 4, ..cfg.clone() }, 3).unwrap();
    assert_ne!(other.0.pixels, img.pixels);
    assert!(synth_generate(&SynthConfig { side: 16, ..cfg }, 1).is_err());
}

#[test]
fn dataset_round_trip_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { side: 32, seed: 1, ..SynthConfig::default() };
    let samples = synth_generate(&cfg, 10).unwrap();
    let index = write_dataset(dir.path(), &samples, &[Split::Train; 10]).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, index);
    let (img, mask) = loaded.load_sample(&loaded.entries[2]).unwrap();
    assert_eq!(mask, samples[2].1);
    // 16-bit storage keeps intensities to within one quantization step
    let worst = img.pixels.iter().zip(&samples[2].0.pixels).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(worst <= 1.0 / 65535.0, "{worst}");

    let a = split_dataset(&loaded, [6.0, 2.0, 2.0], 5).unwrap();
    let b = split_dataset(&loaded, [6.0, 2.0, 2.0], 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(Split::ALL.map(|s| a.count(s)), [6, 2, 2]);
    let ids: HashSet<&str> = a.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids.len(), 10);

    a.write_csv().unwrap();
    let reread = DatasetIndex::read_csv(dir.path()).unwrap();
    assert_eq!(reread, a);
    assert_eq!(reread.load_split(Split::Val).unwrap().len(), 2);

    let study = split_dataset(&loaded, STUDY_SPLIT, 0).unwrap();
    assert_eq!(study.len(), 10);
}

#[test]
fn load_reports_every_bad_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { side: 32, seed: 2, ..SynthConfig::default() };
    let samples = synth_generate(&cfg, 4).unwrap();
    let index = write_dataset(dir.path(), &samples, &[Split::Train; 4]).unwrap();
    let root = dir.path();
    std::fs::remove_file(root.join(&index.entries[0].image)).unwrap();
    write_gray8(&root.join(&index.entries[1].mask), &Array2::from_elem((32, 32), 0.5)).unwrap();
    write_mask(&root.join(&index.entries[2].mask), &Array2::zeros((16, 16))).unwrap();
    write_mask(&root.join(&index.entries[3].mask), &Array2::zeros((32, 32))).unwrap();

    let err = load_dataset(root).unwrap_err();
    let Error::Load(issues) = &err else { panic!("{err}") };
    let reasons: Vec<String> = issues.iter().map(|i| i.to_string()).collect();
    assert_eq!(reasons.len(), 4, "{reasons:?}");
    assert!(reasons[0].starts_with("synth_0000: image:"), "{}", reasons[0]);
    assert!(reasons[1].contains("non-binary mask"), "{}", reasons[1]);
    assert!(reasons[2].contains("image is 32x32 but mask is 16x16"), "{}", reasons[2]);
    assert!(reasons[3].contains("empty mask"), "{}", reasons[3]);
    assert!(load_dataset(&root.join("missing")).is_err());
}

#[test]
fn preprocess_keeps_splits_and_leaves_input_alone() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { side: 96, seed: 4, ..SynthConfig::default() };
    let samples = synth_generate(&cfg, 3).unwrap();
    let splits = [Split::Train, Split::Val, Split::Test];
    write_dataset(src.path(), &samples, &splits).unwrap();
    let before: Vec<Vec<u8>> = ["index.csv", "images/synth_0000.png", "masks/synth_0001.png"]
        .iter()
        .map(|p| std::fs::read(src.path().join(p)).unwrap())
        .collect();

    let pc = PreprocessConfig { size: 64, front_width: 6 };
    let out = preprocess_dataset(src.path(), dst.path(), &pc).unwrap();
    assert_eq!(out.entries.iter().map(|e| e.split).collect::<Vec<_>>(), splits);
    assert!(dst.path().join(INDEX_FILE).exists());
    let mut raw_ratio = 0.0;
    let mut wide_ratio = 0.0;
    for (e, (_, raw)) in out.entries.iter().zip(&samples) {
        let (img, mask) = out.load_sample(e).unwrap();
        assert_eq!(img.dim(), (64, 64));
        assert_eq!(mask.dim(), (64, 64));
        raw_ratio += imbalance_ratio(raw).unwrap();
        wide_ratio += imbalance_ratio(&mask).unwrap();
    }
    // a 1 px line in 96 px becomes a 6 px band in 64 px: the ratio shrinks by about 6 × 96/64
    let factor = raw_ratio / wide_ratio;
    assert!((factor / 9.0 - 1.0).abs() < 0.25, "factor {factor}");

    let after: Vec<Vec<u8>> = ["index.csv", "images/synth_0000.png", "masks/synth_0001.png"]
        .iter()
        .map(|p| std::fs::read(src.path().join(p)).unwrap())
        .collect();
    assert_eq!(before, after);
    assert!(preprocess_dataset(src.path(), src.path(), &pc).is_err());
}
