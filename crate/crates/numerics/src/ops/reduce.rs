use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn resolve_axis(op: &'static str, rank: usize, axis: isize) -> Result<usize> {
    let a = if axis < 0 { axis + rank as isize } else { axis };
    if a < 0 || a as usize >= rank {
        return dim_err(op, format!("axis {axis} out of range for rank {rank}"));
    }
    Ok(a as usize)
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl<'g, T: Element> Var<'g, T> {
    /// Sum of every element as a rank-0 tensor.
    pub fn sum_all(&self) -> Result<Var<'g, T>> {
        let total = self.value().sum();
        let shape = self.shape().to_vec();
        self.graph.record("sum_all", Tensor::scalar(total), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self) -> Result<Var<'g, T>> {
        let n = self.value().numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }

    pub fn sum_axis(&self, axis: isize, keepdim: bool) -> Result<Var<'g, T>> {
        let ax = resolve_axis("sum_axis", self.rank(), axis)?;
        let in_shape = self.shape().to_vec();
        let (outer, len, inner) = split_axis(&in_shape, ax);
        let x = self.value().data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let out = Tensor::from_parts(reduced_shape(&in_shape, ax, keepdim), out);
        self.graph.record("sum_axis", out, &[self], move |g, _| {
            let gd = g.data();
            let mut dx = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    dx.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        })
    }

    pub fn mean_axis(&self, axis: isize, keepdim: bool) -> Result<Var<'g, T>> {
        let ax = resolve_axis("mean_axis", self.rank(), axis)?;
        let len = self.shape()[ax] as f64;
        self.sum_axis(axis, keepdim)?.scale(1.0 / len)
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(&self, axis: isize, keepdim: bool) -> Result<Var<'g, T>> {
        let ax = resolve_axis("max_axis", self.rank(), axis)?;
        let in_shape = self.shape().to_vec();
        let (outer, len, inner) = split_axis(&in_shape, ax);
        let x = self.value().data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    let v = x[(o * len + k) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        let out = Tensor::from_parts(reduced_shape(&in_shape, ax, keepdim), out);
        self.graph.record("max_axis", out, &[self], move |g, _| {
            let mut dx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let k = arg[o * inner + i];
                    dx[(o * len + k) * inner + i] = g.data()[o * inner + i];
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        })
    }

    /// Mean over the two trailing (spatial) axes of `[B,C,H,W]`, keeping them as 1.
    pub fn global_avg_pool(&self) -> Result<Var<'g, T>> {
        if self.rank() != 4 {
            return dim_err("global_avg_pool", format!("expected [B,C,H,W], got {:?}", self.shape()));
        }
        let s = self.shape();
        let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
        self.reshape(&[b, c, hw])?.mean_axis(2, true)?.reshape(&[b, c, 1, 1])
    }
}
