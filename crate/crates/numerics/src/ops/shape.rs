use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Var;
use crate::kernels::Broadcast;
use crate::ops::reduce::{resolve_axis, split_axis};
use crate::tensor::{numel, Tensor};

impl<'g, T: Element> Var<'g, T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        self.graph.record("reshape", out, &[self], move |g, _| {
            vec![Some(g.reshape(&in_shape).expect("reshape adjoint"))]
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.graph.record("permute", out, &[self], move |g, _| {
            vec![Some(g.permute(&inverse).expect("permute adjoint"))]
        })
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&self) -> Result<Var<'g, T>> {
        let r = self.rank();
        if r < 2 {
            return dim_err("transpose_last", "rank < 2");
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Var<'g, T>], axis: isize) -> Result<Var<'g, T>> {
        let Some(first) = parts.first() else {
            return dim_err("concat", "no inputs");
        };
        let ax = resolve_axis("concat", first.rank(), axis)?;
        let mut out_shape = first.shape().to_vec();
        out_shape[ax] = 0;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == ax || a == b);
            if !ok {
                return dim_err(
                    "concat",
                    format!("{:?} does not match {:?} off axis {ax}", p.shape(), first.shape()),
                );
            }
            out_shape[ax] += p.shape()[ax];
        }
        let (outer, _, inner) = split_axis(&out_shape, ax);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[ax]).collect();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.value().data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let in_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        let total = out_shape[ax];
        let inputs: Vec<&Var<'g, T>> = parts.iter().collect();
        first.graph.record(
            "concat",
            Tensor::from_parts(out_shape, data),
            &inputs,
            move |g, needs| {
                let gd = g.data();
                let mut start = 0;
                let mut grads = Vec::with_capacity(lens.len());
                for (k, &len) in lens.iter().enumerate() {
                    if needs[k] {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let s = (o * total + start) * inner;
                            d.extend_from_slice(&gd[s..s + len * inner]);
                        }
                        grads.push(Some(Tensor::from_parts(in_shapes[k].clone(), d)));
                    } else {
                        grads.push(None);
                    }
                    start += len;
                }
                grads
            },
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let ax = resolve_axis("narrow", self.rank(), axis)?;
        let in_shape = self.shape().to_vec();
        if len == 0 || start + len > in_shape[ax] {
            return dim_err(
                "narrow",
                format!("range {start}..{} outside extent {}", start + len, in_shape[ax]),
            );
        }
        let (outer, full, inner) = split_axis(&in_shape, ax);
        let x = self.value().data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&x[s..s + len * inner]);
        }
        let mut out_shape = in_shape.clone();
        out_shape[ax] = len;
        self.graph.record("narrow", Tensor::from_parts(out_shape, data), &[self], move |g, _| {
            let mut dx = vec![T::zero(); numel(&in_shape)];
            for o in 0..outer {
                let s = (o * full + start) * inner;
                dx[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        })
    }

    pub fn split(&self, axis: isize, sizes: &[usize]) -> Result<Vec<Var<'g, T>>> {
        let ax = resolve_axis("split", self.rank(), axis)?;
        if sizes.iter().sum::<usize>() != self.shape()[ax] {
            return dim_err("split", format!("sizes {sizes:?} do not cover extent {}", self.shape()[ax]));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    /// Zero padding of the two trailing axes.
    pub fn pad2d(&self, pad: usize) -> Result<Var<'g, T>> {
        let r = self.rank();
        if r < 2 {
            return dim_err("pad2d", "rank < 2");
        }
        let in_shape = self.shape().to_vec();
        let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let planes = numel(&in_shape[..r - 2]);
        let x = self.value().data();
        let mut data = vec![T::zero(); planes * ph * pw];
        for p in 0..planes {
            for y in 0..h {
                let dst = (p * ph + y + pad) * pw + pad;
                data[dst..dst + w].copy_from_slice(&x[(p * h + y) * w..(p * h + y + 1) * w]);
            }
        }
        let mut out_shape = in_shape.clone();
        out_shape[r - 2] = ph;
        out_shape[r - 1] = pw;
        self.graph.record("pad2d", Tensor::from_parts(out_shape, data), &[self], move |g, _| {
            let gd = g.data();
            let mut dx = Vec::with_capacity(planes * h * w);
            for p in 0..planes {
                for y in 0..h {
                    let s = (p * ph + y + pad) * pw + pad;
                    dx.extend_from_slice(&gd[s..s + w]);
                }
            }
            vec![Some(Tensor::from_parts(in_shape.clone(), dx))]
        })
    }

    /// Broadcasts (right-aligned) to `shape`; the adjoint sums the copies.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        match crate::kernels::broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return dim_err(
                    "broadcast_to",
                    format!("cannot broadcast {:?} to {shape:?}", self.shape()),
                )
            }
        }
        let bc = Broadcast::new(shape, self.shape());
        let x = self.value().data();
        let data = (0..numel(shape)).map(|i| x[bc.offset(i)]).collect();
        let in_shape = self.shape().to_vec();
        self.graph.record(
            "broadcast_to",
            Tensor::from_parts(shape.to_vec(), data),
            &[self],
            move |g, _| {
                let n = numel(&in_shape);
                vec![Some(Tensor::from_parts(in_shape.clone(), bc.reduce(g.data(), n)))]
            },
        )
    }

    /// Row lookup in a `[rows, D]` table; repeated indices accumulate gradient.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'g, T>> {
        if self.rank() != 2 {
            return dim_err("gather_rows", format!("table must be 2-D, got {:?}", self.shape()));
        }
        let (rows, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return dim_err("gather_rows", format!("index {bad} out of range for {rows} rows"));
        }
        let x = self.value().data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        self.graph.record(
            "gather_rows",
            Tensor::from_parts(vec![indices.len(), d], data),
            &[self],
            move |g, _| {
                let mut dx = vec![T::zero(); rows * d];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dx[i * d + j] += g.data()[k * d + j];
                    }
                }
                vec![Some(Tensor::from_parts(vec![rows, d], dx))]
            },
        )
    }
}
