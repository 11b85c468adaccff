//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gctx_numerics::{Rng, Tensor};
use gctx_unet::nnblocks::{FusedMbConv, ParamStore};
use gctx_unet::objectives::{pixel_distance, LabelMask};
use gctx_unet::trainer::AdamW;

// Scalar oracles written directly from the loss definitions.

pub fn oracle_softmax(logits: &[f64], b: usize, k: usize, hw: usize, bi: usize, p: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..k).map(|c| logits[(bi * k + c) * hw + p]).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let _ = b;
    e.iter().map(|v| v / s).collect()
}

pub fn oracle_dice(logits: &[f64], target: &[u8], b: usize, k: usize, hw: usize, smooth: f64) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let (mut inter, mut ps, mut ts) = (0.0, 0.0, 0.0);
        for bi in 0..b {
            for p in 0..hw {
                let prob = oracle_softmax(logits, b, k, hw, bi, p)[c];
                let t = if target[bi * hw + p] as usize == c { 1.0 } else { 0.0 };
                inter += prob * t;
                ps += prob;
                ts += t;
            }
        }
        total += (2.0 * inter + smooth) / (ps + ts + smooth);
    }
    1.0 - total / k as f64
}

pub fn oracle_ce(logits: &[f64], target: &[u8], b: usize, k: usize, hw: usize) -> f64 {
    let mut total = 0.0;
    for bi in 0..b {
        for p in 0..hw {
            let t = target[bi * hw + p] as usize;
            total -= oracle_softmax(logits, b, k, hw, bi, p)[t].ln();
        }
    }
    total / (b * hw) as f64
}

/// All-pairs oracle: every surface pixel against every opposite surface
/// pixel, pooled both ways, linear-interpolated 95th percentile.
pub fn brute_hd95(a: &LabelMask, b: &LabelMask, k: u8, spacing: [f64; 2]) -> Option<f64> {
    let sa = surface_brute(a, k);
    let sb = surface_brute(b, k);
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let mut d = Vec::new();
    for (from, to) in [(&sa, &sb), (&sb, &sa)] {
        for &p in from.iter() {
            d.push(to.iter().map(|&q| pixel_distance(p, q, spacing)).fold(f64::INFINITY, f64::min));
        }
    }
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    Some(d[lo] + (pos - lo as f64) * (d[hi] - d[lo]))
}

pub fn surface_brute(m: &LabelMask, k: u8) -> Vec<(usize, usize)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let at = |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.get(y as usize, x as usize) == k;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if at(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !at(y + dy, x + dx)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

pub fn random_blobs(h: usize, w: usize, k: usize, rng: &mut Rng) -> LabelMask {
    let mut m = LabelMask::zeros(h, w);
    for _ in 0..1 + rng.below(4) {
        let c = 1 + rng.below(k - 1) as u8;
        let (cy, cx) = (rng.below(h) as f64, rng.below(w) as f64);
        let (ry, rx) = (1.0 + rng.uniform() * h as f64 / 3.0, 1.0 + rng.uniform() * w as f64 / 3.0);
        for y in 0..h {
            for x in 0..w {
                if ((y as f64 - cy) / ry).powi(2) + ((x as f64 - cx) / rx).powi(2) <= 1.0 {
                    m.data_mut()[y * w + x] = c;
                }
            }
        }
    }
    if rng.bernoulli(0.3) {
        for v in m.data_mut() {
            if rng.bernoulli(0.05) {
                *v = rng.below(k) as u8;
            }
        }
    }
    m
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Depthwise 3×3 (pad 1) → GELU → SE → 1×1 → + x, written loop by loop.
pub fn mbconv_oracle(x: &Tensor<f64>, mb: &FusedMbConv, p: &ParamStore<f64>) -> Tensor<f64> {
    let [b, c, h, w] = *x.shape() else { unreachable!() };
    let dw = p.get(mb.dw.weight);
    let mut hid = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                acc += dw.get(&[ci, 0, ky, kx]) * x.get(&[bi, ci, sy as usize, sx as usize]);
                            }
                        }
                    }
                    hid[((bi * c + ci) * h + y) * w + xx] = gelu(acc);
                }
            }
        }
    }
    if let Some(se) = &mb.se {
        let (w1, b1, w2, b2) = (
            p.get(se.fc1.weight),
            p.get(se.fc1.bias.unwrap()),
            p.get(se.fc2.weight),
            p.get(se.fc2.bias.unwrap()),
        );
        let r = w1.shape()[0];
        for bi in 0..b {
            let z: Vec<f64> = (0..c)
                .map(|ci| hid[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
                .collect();
            let u: Vec<f64> =
                (0..r).map(|j| gelu(b1.data()[j] + (0..c).map(|ci| w1.get(&[j, ci]) * z[ci]).sum::<f64>())).collect();
            for ci in 0..c {
                let gate = sigmoid(b2.data()[ci] + (0..r).map(|j| w2.get(&[ci, j]) * u[j]).sum::<f64>());
                hid[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w].iter_mut().for_each(|v| *v *= gate);
            }
        }
    }
    let pw = p.get(mb.pw.weight);
    Tensor::from_fn(x.shape(), |i| {
        let (bi, co, pix) = (i / (c * h * w), (i / (h * w)) % c, i % (h * w));
        let mut acc = x.data()[i];
        for ci in 0..c {
            acc += pw.get(&[co, ci, 0, 0]) * hid[(bi * c + ci) * h * w + pix];
        }
        acc
    })
}

/// Textbook AdamW on one scalar, with bias-corrected moments written out.
pub fn scalar_adamw(w0: f64, grad: impl Fn(f64) -> f64, steps: usize, hp: &AdamW) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps as i32 {
        let g = grad(w);
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
        let m_hat = m / (1.0 - hp.beta1.powi(t));
        let v_hat = v / (1.0 - hp.beta2.powi(t));
        w = w - hp.lr * hp.weight_decay * w - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        out.push(w);
    }
    out
}

