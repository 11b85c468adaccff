use std::sync::Arc;

use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Var;
use crate::ops::reduce::resolve_axis;
use crate::tensor::Tensor;

/// Moves `axis` to the end and back; `f` works on the trailing axis.
fn along_axis<'g, T: Element>(
    x: &Var<'g, T>,
    op: &'static str,
    axis: isize,
    f: impl Fn(&Var<'g, T>) -> Result<Var<'g, T>>,
) -> Result<Var<'g, T>> {
    let ax = resolve_axis(op, x.rank(), axis)?;
    let last = x.rank() - 1;
    if ax == last {
        return f(x);
    }
    let mut axes: Vec<usize> = (0..x.rank()).collect();
    axes.swap(ax, last);
    f(&x.permute(&axes)?)?.permute(&axes)
}

/// Per-axis sampling table for half-pixel bilinear resizing.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of the two trailing axes of a raw plane stack
/// (half-pixel centres, edge clamped).
pub fn resize_bilinear<T: Element>(data: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for &(y0, y1, ly) in &ty {
            let ly = T::from_f64(ly);
            for &(x0, x1, lx) in &tx {
                let lx = T::from_f64(lx);
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                out.push(top * (T::one() - ly) + bot * ly);
            }
        }
    }
    out
}

impl<'g, T: Element> Var<'g, T> {
    pub fn softmax(&self, axis: isize) -> Result<Var<'g, T>> {
        along_axis(self, "softmax", axis, |x| x.softmax_last())
    }

    pub fn log_softmax(&self, axis: isize) -> Result<Var<'g, T>> {
        along_axis(self, "log_softmax", axis, |x| x.log_softmax_last())
    }

    fn softmax_last(&self) -> Result<Var<'g, T>> {
        let d = *self.shape().last().unwrap();
        let mut y = self.value().data().to_vec();
        for row in y.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let y = Arc::new(Tensor::from_parts(self.shape().to_vec(), y));
        let saved = y.clone();
        self.graph.record("softmax", (*y).clone(), &[self], move |g, _| {
            let mut dx = Vec::with_capacity(g.numel());
            for (gr, yr) in g.data().chunks(d).zip(saved.data().chunks(d)) {
                let dot = gr.iter().zip(yr).fold(T::zero(), |a, (&gv, &yv)| a + gv * yv);
                dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
            }
            vec![Some(Tensor::from_parts(g.shape().to_vec(), dx))]
        })
    }

    fn log_softmax_last(&self) -> Result<Var<'g, T>> {
        let d = *self.shape().last().unwrap();
        let mut y = self.value().data().to_vec();
        for row in y.chunks_mut(d) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().fold(T::zero(), |a, &v| a + (v - m).exp()).ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::from_parts(self.shape().to_vec(), y);
        let saved = Arc::new(out.clone());
        self.graph.record("log_softmax", out, &[self], move |g, _| {
            let mut dx = Vec::with_capacity(g.numel());
            for (gr, yr) in g.data().chunks(d).zip(saved.data().chunks(d)) {
                let s = gr.iter().copied().fold(T::zero(), |a, b| a + b);
                dx.extend(gr.iter().zip(yr).map(|(&gv, &yv)| gv - yv.exp() * s));
            }
            vec![Some(Tensor::from_parts(g.shape().to_vec(), dx))]
        })
    }

    /// Layer normalisation over the trailing axis with affine `gamma`, `beta` of shape `[D]`.
    pub fn layer_norm(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let Some(&d) = self.shape().last() else {
            return dim_err("layer_norm", "input is a scalar");
        };
        if gamma.shape() != [d] || beta.shape() != [d] {
            return dim_err(
                "layer_norm",
                format!("affine params {:?}/{:?} do not match D={d}", gamma.shape(), beta.shape()),
            );
        }
        let eps = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let x = self.value().data();
        let rows = x.len() / d;
        let mut xhat = Vec::with_capacity(x.len());
        let mut rstd = Vec::with_capacity(rows);
        for row in x.chunks(d) {
            let mean = row.iter().copied().fold(T::zero(), |a, b| a + b) / dn;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let (gd, bd) = (gamma.value().data(), beta.value().data());
        let out: Vec<T> = xhat
            .chunks(d)
            .flat_map(|row| row.iter().zip(gd).zip(bd).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let shape = self.shape().to_vec();
        let gamma_v = gamma.value_arc();
        let out = Tensor::from_parts(shape.clone(), out);
        self.graph.record("layer_norm", out, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let gam = gamma_v.data();
            let dx = needs[0].then(|| {
                let mut dx = Vec::with_capacity(gd.len());
                for ((gr, hr), &r) in gd.chunks(d).zip(xhat.chunks(d)).zip(&rstd) {
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        s1 += dh;
                        s2 += dh * hr[j];
                    }
                    s1 /= dn;
                    s2 /= dn;
                    dx.extend((0..d).map(|j| r * (gr[j] * gam[j] - s1 - hr[j] * s2)));
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            let dgamma = needs[1].then(|| {
                let mut dgm = vec![T::zero(); d];
                for (gr, hr) in gd.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dgm[j] += gr[j] * hr[j];
                    }
                }
                Tensor::from_parts(vec![d], dgm)
            });
            let dbeta = needs[2].then(|| {
                let mut db = vec![T::zero(); d];
                for gr in gd.chunks(d) {
                    for j in 0..d {
                        db[j] += gr[j];
                    }
                }
                Tensor::from_parts(vec![d], db)
            });
            vec![dx, dgamma, dbeta]
        })
    }

    /// Bilinear resize of `[.., H, W]` to `[.., oh, ow]` with half-pixel centres.
    pub fn upsample_bilinear2d(&self, oh: usize, ow: usize) -> Result<Var<'g, T>> {
        let r = self.rank();
        if r < 2 || oh == 0 || ow == 0 {
            return dim_err("upsample_bilinear2d", format!("bad request {:?} -> {oh}x{ow}", self.shape()));
        }
        let in_shape = self.shape().to_vec();
        let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
        let planes = self.value().numel() / (h * w);
        let out = resize_bilinear(self.value().data(), planes, h, w, oh, ow);
        let mut out_shape = in_shape.clone();
        out_shape[r - 2] = oh;
        out_shape[r - 1] = ow;
        let ty = bilinear_taps(h, oh);
        let tx = bilinear_taps(w, ow);
        self.graph.record(
            "upsample_bilinear2d",
            Tensor::from_parts(out_shape, out),
            &[self],
            move |g, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        let ly = T::from_f64(ly);
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let lx = T::from_f64(lx);
                            let gv = gd[(p * oh + oy) * ow + ox];
                            dst[y0 * w + x0] += gv * (T::one() - ly) * (T::one() - lx);
                            dst[y0 * w + x1] += gv * (T::one() - ly) * lx;
                            dst[y1 * w + x0] += gv * ly * (T::one() - lx);
                            dst[y1 * w + x1] += gv * ly * lx;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
            },
        )
    }
}
