use gctx_numerics::{Rng, Tensor};

use super::dataset::{Dataset, SegSample, Split};
use crate::error::{Error, Result};
use crate::objectives::LabelMask;

const CHANNELS: usize = 3;
const NOISE_STD: f64 = 0.05;
const MAX_TRIES: usize = 64;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Annulus { cy: f64, cx: f64, r_in: f64, r_out: f64 },
}

impl Shape {
    fn random(size: usize, rng: &mut Rng) -> Shape {
        let s = size as f64;
        let r_lo = (s / 10.0).max(3.0);
        let r_hi = (s / 4.0).max(r_lo + 1.0);
        let (cy, cx) = (rng.range(0.2 * s, 0.8 * s), rng.range(0.2 * s, 0.8 * s));
        match rng.below(3) {
            0 => Shape::Ellipse { cy, cx, ry: rng.range(r_lo, r_hi), rx: rng.range(r_lo, r_hi) },
            1 => {
                let (hy, hx) = (rng.range(r_lo, r_hi), rng.range(r_lo, r_hi));
                Shape::Rect { y0: cy - hy, x0: cx - hx, y1: cy + hy, x1: cx + hx }
            }
            _ => {
                let r_out = rng.range(r_lo.max(5.0), r_hi.max(6.0));
                Shape::Annulus { cy, cx, r_in: r_out * rng.range(0.35, 0.6), r_out }
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
            Shape::Annulus { cy, cx, r_in, r_out } => {
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                d2 <= r_out * r_out && d2 >= r_in * r_in
            }
        }
    }
}

/// Mean intensity of class `k` in channel `c`.
fn class_level(k: usize, num_classes: usize, c: usize) -> f64 {
    let base = 0.1 + 0.8 * k as f64 / (num_classes - 1) as f64;
    (base * (1.0 - 0.12 * c as f64) + 0.04 * c as f64).clamp(0.0, 1.0)
}

fn sample_mask(size: usize, num_classes: usize, rng: &mut Rng) -> LabelMask {
    loop {
        let mut labels: Vec<u8> = (1..num_classes as u8).collect();
        rng.shuffle(&mut labels);
        let count = 1 + rng.below(num_classes - 1);
        labels.truncate(count);
        let shapes: Vec<(u8, Shape)> = labels.iter().map(|&l| (l, Shape::random(size, rng))).collect();
        let mask = LabelMask::from_fn(size, size, |y, x| {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            shapes.iter().rev().find(|(_, s)| s.contains(py, px)).map_or(0, |(l, _)| *l)
        });
        let counts = mask.class_counts(num_classes);
        if labels.iter().all(|&l| counts[l as usize] > 0) {
            return mask;
        }
    }
}

/// `n` samples of `size×size` with 1..K−1 labelled shapes each; intensity
/// follows the label with Gaussian noise. Fully determined by `rng`.
pub fn generate_synthetic(n: usize, size: usize, num_classes: usize, rng: &mut Rng) -> Result<Dataset> {
    if num_classes < 2 || num_classes > 256 {
        return Err(Error::config(format!("classes must be in 2..=256, got {num_classes}")));
    }
    if size < 8 {
        return Err(Error::config(format!("synthetic size must be at least 8, got {size}")));
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut mask = sample_mask(size, num_classes, rng);
        for _ in 1..MAX_TRIES {
            if mask.data().iter().any(|&v| v != 0) {
                break;
            }
            mask = sample_mask(size, num_classes, rng);
        }
        let hw = size * size;
        let image = Tensor::from_fn(&[CHANNELS, size, size], |idx| {
            let (c, p) = (idx / hw, idx % hw);
            let level = class_level(mask.data()[p] as usize, num_classes, c);
            (level + NOISE_STD * rng.normal()).clamp(0.0, 1.0) as f32
        });
        samples.push(SegSample::new(format!("case{i:04}"), image, mask, [1.0, 1.0])?);
    }
    Ok(Dataset { samples, num_classes, split: Split::Train })
}
