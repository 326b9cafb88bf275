//! Synthetic SAR-like scenes with a known calving front.
//!
//! A smooth random curve crosses the image from the left edge to the right
//! edge. Above it lies bright, textured glacier ice; below it dark open water,
//! optionally cluttered with bright melange blobs near the front. The whole
//! scene is multiplied by gamma speckle. The label is the curve rasterized as
//! a 1-px, 4-connected staircase.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::imageproc::{FrontMask, SampleImage};

pub const SYNTH_MIN_SIDE: usize = 32;

/// Number of random-walk knots the front curve is interpolated through.
const KNOTS: usize = 7;
/// Upper bound on the total vertical travel of the front, as a fraction of the side.
const MAX_TRAVEL: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub side: usize,
    pub seed: u64,
    /// Shape of the unit-mean gamma speckle; more looks, less noise.
    pub speckle_looks: u32,
    /// Peak-to-peak excursion of the front as a fraction of the side.
    pub front_amplitude: f64,
    pub melange_probability: f64,
    pub resolution_range_m: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            side: 512,
            seed: 0,
            speckle_looks: 4,
            front_amplitude: 0.3,
            melange_probability: 0.5,
            resolution_range_m: (30.0, 60.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < SYNTH_MIN_SIDE {
            return Err(Error::invalid(format!(
                "side {} is below the minimum of {SYNTH_MIN_SIDE}",
                self.side
            )));
        }
        if self.speckle_looks == 0 {
            return Err(Error::invalid("speckle looks must be at least 1"));
        }
        if !(self.front_amplitude > 0.0 && self.front_amplitude <= 1.0) {
            return Err(Error::invalid(format!(
                "front amplitude must be in (0, 1], got {}",
                self.front_amplitude
            )));
        }
        if !(0.0..=1.0).contains(&self.melange_probability) {
            return Err(Error::invalid(format!(
                "melange probability must be in [0, 1], got {}",
                self.melange_probability
            )));
        }
        let (lo, hi) = self.resolution_range_m;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("invalid resolution range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Catmull-Rom interpolation through equally spaced knots, sampled at `n` points.
fn smooth_curve(knots: &[f64], n: usize) -> Vec<f64> {
    let k = knots.len();
    let at = |i: isize| knots[i.clamp(0, k as isize - 1) as usize];
    (0..n)
        .map(|x| {
            let u = x as f64 / (n - 1) as f64 * (k - 1) as f64;
            let i = (u.floor() as isize).min(k as isize - 2);
            let t = u - i as f64;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            0.5 * (2.0 * p1
                + (p2 - p0) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
        })
        .collect()
}

/// Front ordinate (fractional row) for every column.
fn front_curve(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = cfg.side as f64;
    let mut walk = Vec::with_capacity(KNOTS);
    let mut y = 0.0;
    for _ in 0..KNOTS {
        walk.push(y);
        let step: f64 = StandardNormal.sample(rng);
        y += step;
    }
    let mut f = smooth_curve(&walk, cfg.side);
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    f.iter_mut().for_each(|v| *v -= mean);
    let (min, max) = f.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let travel: f64 = f.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let scale = if max - min > 1e-12 {
        (cfg.front_amplitude * side / (max - min)).min(MAX_TRAVEL * side / travel)
    } else {
        0.0
    };
    let (min, max) = (min * scale, max * scale);
    let (lo, hi) = (side / 8.0 - min, side * 7.0 / 8.0 - max);
    let center = if hi > lo { rng.random_range(lo..=hi) } else { side / 2.0 };
    f.iter().map(|v| center + v * scale).collect()
}

/// Rasterize as a 4-connected staircase, one pixel wide. A vertical run
/// that would reverse the previous column's run is postponed by one
/// column so that no 2×2 block appears.
fn rasterize(curve: &[f64], side: usize) -> Array2<u8> {
    let rows: Vec<isize> = curve
        .iter()
        .map(|&v| (v.round() as isize).clamp(1, side as isize - 2))
        .collect();
    let mut mask = Array2::zeros((side, side));
    let mut row = rows[0];
    let mut last: Option<(usize, isize)> = None;
    for x in 0..side {
        mask[[row as usize, x]] = 1;
        let Some(&target) = rows.get(x + 1) else { break };
        let dir = (target - row).signum();
        let hairpin = matches!(last, Some((col, d)) if col + 1 == x && d == -dir);
        if dir != 0 && !hairpin {
            while row != target {
                row += dir;
                mask[[row as usize, x]] = 1;
            }
            last = Some((x, dir));
        }
    }
    mask
}

/// Smooth random field in `[-1, 1]` made of a few plane waves.
fn texture(side: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(2.0..8.0) * std::f64::consts::TAU / side as f64;
            (freq * theta.cos(), freq * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    Array2::from_shape_fn((side, side), |(y, x)| {
        let s: f64 = waves
            .iter()
            .map(|&(kx, ky, phase)| (kx * x as f64 + ky * y as f64 + phase).sin())
            .sum();
        (s / waves.len() as f64) as f32
    })
}

/// Sample `index` of the stream defined by `cfg`; independent of other indices.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<(SampleImage, FrontMask)> {
    cfg.validate()?;
    let side = cfg.side;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let (lo, hi) = cfg.resolution_range_m;
    let resolution = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let curve = front_curve(cfg, &mut rng);
    let mask = rasterize(&curve, side);

    let glacier = texture(side, &mut rng);
    let sea = texture(side, &mut rng);
    let mut pixels = Array2::from_shape_fn((side, side), |(y, x)| {
        if (y as f64) < curve[x] {
            0.55 + 0.1 * glacier[[y, x]]
        } else {
            0.12 + 0.04 * sea[[y, x]]
        }
    });

    if rng.random_bool(cfg.melange_probability) {
        let band = side as f64 / 6.0;
        let blobs = rng.random_range(3..=8);
        for _ in 0..blobs {
            let cx = rng.random_range(0..side);
            let cy = curve[cx] + rng.random_range(0.0..band);
            let r = rng.random_range(side as f64 / 40.0..side as f64 / 15.0).max(1.0);
            for ((y, x), v) in pixels.indexed_iter_mut() {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx as f64);
                if dy * dy + dx * dx <= r * r && (y as f64) > curve[x] + 1.0 {
                    *v = 0.4;
                }
            }
        }
    }

    let looks = f64::from(cfg.speckle_looks);
    let speckle = Gamma::new(looks, 1.0 / looks).expect("positive shape and scale");
    for v in pixels.iter_mut() {
        let s: f64 = speckle.sample(&mut rng);
        *v = ((f64::from(*v) * s) as f32).clamp(0.0, 1.0);
    }

    let id = format!("synth_{index:04}");
    Ok((
        SampleImage::new(&id, pixels, resolution)?,
        FrontMask::new(&id, mask, resolution)?,
    ))
}

pub fn synth_generate(cfg: &SynthConfig, n: usize) -> Result<Vec<(SampleImage, FrontMask)>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    (0..n).map(|i| synth_sample(cfg, i)).collect()
}
