use ndarray::Array2;

use super::FrontMask;
use crate::error::{Error, Result};

/// Binary dilation with a Euclidean disk of the given radius.
pub fn dilate_disk(grid: &Array2<u8>, radius: usize) -> Array2<u8> {
    if radius == 0 {
        return grid.clone();
    }
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
        .collect();
    let (h, w) = grid.dim();
    let mut out = Array2::zeros((h, w));
    for ((y, x), &v) in grid.indexed_iter() {
        if v == 0 {
            continue;
        }
        for &(dy, dx) in &offsets {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                out[[yy as usize, xx as usize]] = 1;
            }
        }
    }
    out
}

/// Thicken front lines so that a straight 1-px line ends up about
/// `target_width` pixels wide: disk radius `⌊(target_width − 1) / 2⌋`.
pub fn dilate_to_width(mask: &FrontMask, target_width: usize) -> Result<FrontMask> {
    if target_width < 1 {
        return Err(Error::invalid("target width must be at least 1"));
    }
    Ok(FrontMask {
        id: mask.id.clone(),
        pixels: dilate_disk(&mask.pixels, (target_width - 1) / 2),
        resolution_m: mask.resolution_m,
    })
}

/// 8-neighborhood clockwise from north: P2..P9 in Zhang–Suen notation.
fn neighbors(grid: &Array2<u8>, y: usize, x: usize) -> [u8; 8] {
    let (h, w) = grid.dim();
    let at = |dy: isize, dx: isize| {
        let (yy, xx) = (y as isize + dy, x as isize + dx);
        if yy < 0 || xx < 0 || yy as usize >= h || xx as usize >= w {
            0
        } else {
            u8::from(grid[[yy as usize, xx as usize]] != 0)
        }
    };
    [
        at(-1, 0),
        at(-1, 1),
        at(0, 1),
        at(1, 1),
        at(1, 0),
        at(1, -1),
        at(0, -1),
        at(-1, -1),
    ]
}

/// Zhang–Suen thinning to a 1-px wide, 8-connected skeleton.
pub fn thin(grid: &Array2<u8>) -> Array2<u8> {
    let mut g = grid.mapv(|v| u8::from(v != 0));
    let mut removals = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            removals.clear();
            for ((y, x), &v) in g.indexed_iter() {
                if v == 0 {
                    continue;
                }
                let p = neighbors(&g, y, x);
                let b: u8 = p.iter().sum();
                let a = (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count();
                if !(2..=6).contains(&b) || a != 1 {
                    continue;
                }
                let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                let remove = if pass == 0 {
                    n * e * s == 0 && e * s * w == 0
                } else {
                    n * e * w == 0 && n * s * w == 0
                };
                if remove {
                    removals.push((y, x));
                }
            }
            for &(y, x) in &removals {
                g[[y, x]] = 0;
            }
            changed |= !removals.is_empty();
        }
        if !changed {
            return g;
        }
    }
}

/// Length in pixels of the center line of the foreground.
///
/// Thinning shortens every branch by roughly half the local thickness at
/// its free end, so each skeleton endpoint is extended along its last step
/// until it leaves the foreground. A straight band of length `L` thus
/// measures exactly `L`.
pub fn skeleton_length(grid: &Array2<u8>) -> usize {
    let fg = grid.mapv(|v| u8::from(v != 0));
    let mut skel = thin(&fg);
    let (h, w) = skel.dim();
    let endpoints: Vec<(usize, usize, isize, isize)> = skel
        .indexed_iter()
        .filter(|(_, &v)| v != 0)
        .filter_map(|((y, x), _)| {
            let mut only = None;
            let mut count = 0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0
                        && xx >= 0
                        && (yy as usize) < h
                        && (xx as usize) < w
                        && skel[[yy as usize, xx as usize]] != 0
                    {
                        count += 1;
                        only = Some((dy, dx));
                    }
                }
            }
            match (count, only) {
                (1, Some((dy, dx))) => Some((y, x, -dy, -dx)),
                _ => None,
            }
        })
        .collect();
    for (y, x, dy, dx) in endpoints {
        let (mut yy, mut xx) = (y as isize + dy, x as isize + dx);
        while yy >= 0
            && xx >= 0
            && (yy as usize) < h
            && (xx as usize) < w
            && fg[[yy as usize, xx as usize]] != 0
            && skel[[yy as usize, xx as usize]] == 0
        {
            skel[[yy as usize, xx as usize]] = 1;
            yy += dy;
            xx += dx;
        }
    }
    skel.iter().filter(|&&v| v != 0).count()
}
