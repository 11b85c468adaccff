//! Slice-level kernels shared by the differentiable ops.
//!
//! Every reduction accumulates in a fixed index order, so results are
//! bit-identical from run to run.

use crate::element::Element;
use crate::tensor::{numel, strides, Tensor};

/// `c[m,n] += a[m,k] * b[k,n]`, all row-major.
///
/// Each output element accumulates over `k` in ascending order regardless of
/// `n`, so computing a subset of columns gives bit-identical values.
pub fn gemm<T: Element>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

pub fn transpose2d<T: Element>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Geometry of one 2-D correlation window sweep.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `img[C,H,W]` into `[C*kh*kw, out_h*out_w]` with zero padding.
pub fn im2col<T: Element>(img: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.col_cols();
    let mut col = vec![T::zero(); g.col_rows() * cols];
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `img[C,H,W]`.
pub fn col2im<T: Element>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    let cols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &s) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Odometer over a row-major index space.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let n = numel(shape);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        f(&idx);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub fn permute<T: Element>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = t.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let data = t.data();
    let mut out = Vec::with_capacity(t.numel());
    if out_shape.is_empty() {
        out.push(data[0]);
        return Tensor::from_parts(out_shape, out);
    }
    // Innermost axis handled as a strided run.
    let last = out_shape.len() - 1;
    let inner = out_shape[last];
    let inner_stride = src_strides[last];
    let outer_shape = &out_shape[..last];
    for_each_index(outer_shape, |idx| {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
    });
    Tensor::from_parts(out_shape, out)
}

/// NumPy-style broadcast of two shapes (right-aligned).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// How a source of shape `src` is read when broadcast to `out`.
pub(crate) enum Broadcast {
    /// Shapes are equal.
    Same,
    /// Source holds one value.
    Scalar,
    /// Source shape is a suffix of the output: offset is `i % len`.
    Suffix(usize),
    /// General case: explicit source offset per output element.
    Offsets(Vec<usize>),
}

impl Broadcast {
    pub(crate) fn new(out: &[usize], src: &[usize]) -> Self {
        if out == src {
            return Broadcast::Same;
        }
        let n = numel(src);
        if n == 1 {
            return Broadcast::Scalar;
        }
        let trimmed: Vec<usize> = {
            let lead = src.iter().take_while(|&&d| d == 1).count();
            src[lead..].to_vec()
        };
        if out.ends_with(&trimmed) {
            return Broadcast::Suffix(n);
        }
        let r = out.len();
        let src_strides = strides(src);
        let eff: Vec<usize> = (0..r)
            .map(|i| {
                if i + src.len() < r {
                    0
                } else {
                    let j = i + src.len() - r;
                    if src[j] == 1 {
                        0
                    } else {
                        src_strides[j]
                    }
                }
            })
            .collect();
        let mut offs = Vec::with_capacity(numel(out));
        for_each_index(out, |idx| {
            offs.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        });
        Broadcast::Offsets(offs)
    }

    #[inline]
    pub(crate) fn offset(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Suffix(n) => i % n,
            Broadcast::Offsets(o) => o[i],
        }
    }

    /// Sums an output-shaped gradient back onto the source shape.
    pub(crate) fn reduce<T: Element>(&self, grad: &[T], src_len: usize) -> Vec<T> {
        match self {
            Broadcast::Same => grad.to_vec(),
            _ => {
                let mut out = vec![T::zero(); src_len];
                for (i, &g) in grad.iter().enumerate() {
                    out[self.offset(i)] += g;
                }
                out
            }
        }
    }
}
