use indexmap::IndexMap;
use ndarray::Array2;
use proptest::prelude::*;

use frontseg::attnet::{Checkpoint, ParamValue};
use frontseg::data::split_counts;
use frontseg::imageproc::{
    crop_centered, dilate_to_width, edt_grid, pad_to_square, resize_grid, FrontMask, Transform,
};
use frontseg::losses::{dice_binary, iou, soft_dice, weight_map};
use frontseg::tensor::{conv2d, mul, sum, transposed_conv2d, Tensor};
use frontseg::training::{cyclic_lr, EarlyStopping, TrainConfig};

fn grid(h: usize, w: usize, density: f64) -> impl Strategy<Value = Array2<u8>> {
    prop::collection::vec(prop::bool::weighted(density), h * w)
        .prop_map(move |v| Array2::from_shape_vec((h, w), v.into_iter().map(u8::from).collect()).unwrap())
}

fn nonempty_grid(max: usize) -> impl Strategy<Value = Array2<u8>> {
    (2..=max, 2..=max, 0.02f64..0.4)
        .prop_flat_map(|(h, w, d)| (grid(h, w, d), 0..h, 0..w))
        .prop_map(|(mut g, r, c)| {
            g[[r, c]] = 1;
            g
        })
}

fn values(n: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, n)
}

fn brute_edt(mask: &Array2<u8>) -> Array2<f64> {
    let fg: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &v)| v != 0).map(|(p, _)| p).collect();
    Array2::from_shape_fn(mask.dim(), |(r, c)| {
        fg.iter()
            .map(|&(fr, fc)| ((r as f64 - fr as f64).powi(2) + (c as f64 - fc as f64).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn edt_is_exact_and_lipschitz(mask in nonempty_grid(20)) {
        let d = edt_grid(&mask);
        let oracle = brute_edt(&mask);
        for ((p, &v), &o) in d.indexed_iter().zip(&oracle) {
            prop_assert!((v - o).abs() <= 1e-9);
            prop_assert_eq!(v == 0.0, mask[p] != 0);
        }
        let (h, w) = d.dim();
        for r in 0..h {
            for c in 0..w {
                if r + 1 < h { prop_assert!((d[[r, c]] - d[[r + 1, c]]).abs() <= 1.0 + 1e-12); }
                if c + 1 < w { prop_assert!((d[[r, c]] - d[[r, c + 1]]).abs() <= 1.0 + 1e-12); }
            }
        }
    }

    #[test]
    fn dilation_is_extensive_and_monotone(mask in nonempty_grid(24), a in 1usize..8, b in 1usize..8) {
        let m = FrontMask::new("p", mask, 1.0).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let small = dilate_to_width(&m, lo).unwrap();
        let large = dilate_to_width(&m, hi).unwrap();
        for ((&x, &s), &l) in m.pixels.iter().zip(&small.pixels).zip(&large.pixels) {
            prop_assert!(s >= x);
            prop_assert!(l >= s);
        }
    }

    #[test]
    fn pad_then_crop_is_identity(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let g = Array2::from_shape_fn((h, w), |(r, c)| ((seed ^ (r * 31 + c) as u64) % 97) as f32);
        let p = pad_to_square(&g);
        prop_assert_eq!(p.dim(), (h.max(w), h.max(w)));
        prop_assert_eq!(crop_centered(&p, h, w).unwrap(), g);
    }

    #[test]
    fn transforms_form_a_group(g in grid(7, 7, 0.3)) {
        let all: Vec<Transform> = Transform::all().collect();
        prop_assert_eq!(all.len(), 8);
        let images: Vec<Array2<u8>> = all.iter().map(|t| t.apply(&g)).collect();
        let turn = Transform { quarter_turns: 1, flip: false };
        let flip = Transform { quarter_turns: 0, flip: true };
        let mut r = g.clone();
        for _ in 0..4 { r = turn.apply(&r); }
        prop_assert_eq!(&r, &g);
        prop_assert_eq!(&flip.apply(&flip.apply(&g)), &g);
        // closure: turning any variant lands on another variant
        for im in &images {
            prop_assert!(images.contains(&turn.apply(im)));
            prop_assert!(images.contains(&flip.apply(im)));
        }
    }

    #[test]
    fn dice_is_equivariant_under_augmentation(img in prop::collection::vec(0.0f32..1.0, 64), mask in grid(8, 8, 0.3)) {
        // a pointwise predictor commutes with every flip and rotation
        let img = Array2::from_shape_vec((8, 8), img).unwrap();
        let predict = |x: &Array2<f32>| x.mapv(|v| v * v);
        let base = dice_binary(predict(&img).as_slice().unwrap(), mask.as_slice().unwrap(), 0.5).unwrap();
        for t in Transform::all() {
            let p = predict(&t.apply(&img));
            let m = t.apply(&mask);
            let d = dice_binary(p.as_slice().unwrap(), m.as_slice().unwrap(), 0.5).unwrap();
            prop_assert!((d - base).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_ranges_and_identity(p in prop::collection::vec(0.0f32..1.0, 36), y in grid(6, 6, 0.3)) {
        let y = y.into_raw_vec_and_offset().0;
        let yf: Vec<f32> = y.iter().map(|&v| f32::from(v)).collect();
        let d = dice_binary(&p, &y, 0.5).unwrap();
        let i = iou(&p, &y, 0.5).unwrap();
        let s = soft_dice(&p, &yf).unwrap();
        for v in [d, i, s] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((i - d / (2.0 - d)).abs() < 1e-6);
        prop_assert!((dice_binary(&yf, &y, 0.5).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_map_law(mask in nonempty_grid(16), wi in 0usize..3) {
        let w = [4.0, 8.0, 16.0][wi];
        let m = FrontMask::new("w", mask.clone(), 1.0).unwrap();
        let wm = weight_map(&m, w).unwrap().values;
        let d = edt_grid(&mask);
        for ((p, &v), &dist) in wm.indexed_iter().zip(&d) {
            if mask[p] != 0 {
                prop_assert_eq!(v, 1.0);
            } else {
                prop_assert!(v > 0.0 && v < 1.0);
                prop_assert!((v - (2.0 / (1.0 + (-dist / w).exp()) - 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_kernels_preserve_shape(k in prop::sample::select(vec![1usize, 3, 5, 7]), h in 1usize..9, w in 1usize..9) {
        let x = Tensor::zeros(vec![1, 2, h, w]).unwrap();
        let wt = Tensor::zeros(vec![3, 2, k, k]).unwrap();
        let y = conv2d(&x, &wt, None, 1, (k - 1) / 2).unwrap();
        prop_assert_eq!(y.shape(), &[1, 3, h, w]);
    }

    #[test]
    fn conv_adjoint_identity(
        stride in 1usize..3,
        k in prop::sample::select(vec![1usize, 2, 3, 5]),
        out in 2usize..6,
        seed in any::<u64>(),
    ) {
        let pad = if k % 2 == 1 && stride == 1 { (k - 1) / 2 } else { 0 };
        let side = (out - 1) * stride + k - 2 * pad;
        let gen = |n: usize, salt: u64| -> Vec<f32> {
            let mut s = seed ^ salt;
            (0..n).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            }).collect()
        };
        let x = Tensor::new(vec![2, 3, side, side], gen(2 * 3 * side * side, 1)).unwrap();
        let wt = Tensor::new(vec![4, 3, k, k], gen(4 * 3 * k * k, 2)).unwrap();
        let y = Tensor::new(vec![2, 4, out, out], gen(2 * 4 * out * out, 3)).unwrap();
        let fwd = conv2d(&x, &wt, None, stride, pad).unwrap();
        let back = transposed_conv2d(&y, &wt, None, stride, pad).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&p, &q)| f64::from(p) * f64::from(q)).sum::<f64>();
        let lhs = dot(fwd.data(), y.data());
        let rhs = dot(x.data(), back.data());
        // both sides are sums with heavy cancellation; relative to the sum of term magnitudes
        let abs = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.abs()).collect()).unwrap();
        let scale = dot(conv2d(&abs(&x), &abs(&wt), None, stride, pad).unwrap().data(), abs(&y).data());
        prop_assert!((lhs - rhs).abs() / scale < 1e-5, "{} vs {} (scale {})", lhs, rhs, scale);
    }

    #[test]
    fn backward_twice_doubles(v in values(12)) {
        let x = Tensor::param(vec![1, 1, 3, 4], v).unwrap();
        let y = sum(&mul(&x, &x).unwrap());
        y.backward().unwrap();
        let once = x.grad().unwrap();
        y.backward().unwrap();
        let twice = x.grad().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn resized_maps_stay_in_open_interval(v in prop::collection::vec(1e-3f32..0.999, 16), out in 1usize..40) {
        let g = Array2::from_shape_vec((4, 4), v).unwrap();
        let r = resize_grid(&g, out, out);
        let (lo, hi) = g.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(r.iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6 && x > 0.0 && x < 1.0));
        let c = resize_grid(&Array2::from_elem((4, 4), 0.3f32), out, out);
        prop_assert!(c.iter().all(|&x| (x - 0.3).abs() < 1e-6));
    }

    #[test]
    fn learning_rate_within_bounds(step in 0u64..10_000, spe in 1usize..50) {
        let cfg = TrainConfig::default();
        let lr = cyclic_lr(step, spe, &cfg);
        prop_assert!(lr >= cfg.lr_min && lr <= cfg.lr_max);
        let period = (cfg.cycle_epochs * spe) as u64;
        prop_assert_eq!(cyclic_lr(step + period, spe, &cfg), lr);
        let cycle_start = step - step % period;
        prop_assert_eq!(cyclic_lr(cycle_start, spe, &cfg), cfg.lr_min);
        prop_assert!((cyclic_lr(cycle_start + period / 2, spe, &cfg) - cfg.lr_max).abs() < 1e-15);
    }

    #[test]
    fn early_stopping_tracks_the_maximum(vals in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..60), patience in 1usize..10) {
        let mut es = EarlyStopping::new(patience);
        let mut best: Option<f64> = None;
        for (i, v) in vals.iter().enumerate() {
            let v = v.unwrap_or(f64::NAN);
            let d = es.observe(i + 1, v);
            let improves = !v.is_nan() && best.is_none_or(|b| v > b);
            prop_assert_eq!(d.improved, improves);
            if improves { best = Some(v); }
            prop_assert_eq!(es.best, best);
            if d.stop { break; }
        }
    }

    #[test]
    fn split_counts_partition(n in 0usize..1000, a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.1f64..10.0) {
        let counts = split_counts(n, [a, b, c]).unwrap();
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        let total = a + b + c;
        for (cnt, r) in counts.iter().zip([a, b, c]) {
            prop_assert!((*cnt as f64 - r * n as f64 / total).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        tensors in prop::collection::vec((prop::collection::vec(1usize..4, 0..4), any::<u32>()), 0..6),
        meta in prop::collection::vec(("[a-z.]{1,8}", "[ -~]{0,12}"), 0..5),
    ) {
        let mut map = IndexMap::new();
        for (i, (shape, bits)) in tensors.into_iter().enumerate() {
            let n = shape.iter().product();
            let data = (0..n).map(|j| f32::from_bits(bits.wrapping_add(j as u32) & 0x7f7f_ffff)).collect();
            map.insert(format!("t{i}"), ParamValue { shape, data });
        }
        let meta: Vec<(String, String)> = meta.into_iter().filter(|(k, _)| !k.contains('=')).collect();
        let ck = Checkpoint { meta, tensors: map };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.tensors.len(), ck.tensors.len());
    }
}
