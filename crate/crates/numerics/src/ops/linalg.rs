use crate::element::Element;
use crate::error::{dim_err, Result};
use crate::graph::Var;
use crate::kernels::{col2im, gemm, im2col, transpose2d, ConvGeom};
use crate::tensor::{numel, Tensor};

/// Output extent of a strided correlation.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed correlation.
pub fn conv_transpose_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&v| v > 0)
}

fn bias_grad<T: Element>(g: &[T], batch: usize, channels: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let s = (b * channels + c) * plane;
            for &v in &g[s..s + plane] {
                *acc += v;
            }
        }
    }
    Tensor::from_parts(vec![channels], db)
}

impl<'g, T: Element> Var<'g, T> {
    /// Batched matrix product `[.., M, K] x [.., K, N]`.
    ///
    /// Batch dimensions must match, or `rhs` may be a plain `[K, N]` matrix
    /// shared by every batch entry.
    pub fn matmul(&self, rhs: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return dim_err("matmul", format!("operands must be at least 2-D: {sa:?} x {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared = sb.len() == 2;
        let batch_a = &sa[..sa.len() - 2];
        if k != k2 || (!shared && batch_a != &sb[..sb.len() - 2]) {
            return dim_err("matmul", format!("incompatible shapes {sa:?} x {sb:?}"));
        }
        let batch = numel(batch_a);
        let (ad, bd) = (self.value().data(), rhs.value().data());
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            let bo = if shared { 0 } else { i * k * n };
            gemm(m, k, n, &ad[i * m * k..(i + 1) * m * k], &bd[bo..bo + k * n], &mut out[i * m * n..(i + 1) * m * n]);
        }
        self.graph.add_flops(2 * (batch * m * k * n) as u64);
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let (a, b) = (self.value_arc(), rhs.value_arc());
        self.graph.record("matmul", Tensor::from_parts(out_shape, out), &[self, rhs], move |g, needs| {
            let (ad, bd, gd) = (a.data(), b.data(), g.data());
            let da = needs[0].then(|| {
                let mut da = vec![T::zero(); batch * m * k];
                for i in 0..batch {
                    let bo = if shared { 0 } else { i * k * n };
                    let bt = transpose2d(&bd[bo..bo + k * n], k, n);
                    gemm(m, n, k, &gd[i * m * n..(i + 1) * m * n], &bt, &mut da[i * m * k..(i + 1) * m * k]);
                }
                Tensor::from_parts(a.shape().to_vec(), da)
            });
            let db = needs[1].then(|| {
                let mut db = vec![T::zero(); b.numel()];
                for i in 0..batch {
                    let at = transpose2d(&ad[i * m * k..(i + 1) * m * k], m, k);
                    let bo = if shared { 0 } else { i * k * n };
                    gemm(k, m, n, &at, &gd[i * m * n..(i + 1) * m * n], &mut db[bo..bo + k * n]);
                }
                Tensor::from_parts(b.shape().to_vec(), db)
            });
            vec![da, db]
        })
    }

    /// Affine map over the trailing axis: `x W^T + b` with `W: [Dout, Din]`.
    pub fn linear(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>) -> Result<Var<'g, T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape();
        let Some(&din) = xs.last() else {
            return dim_err("linear", "input is a scalar");
        };
        if ws.len() != 2 || ws[1] != din {
            return dim_err("linear", format!("weight {ws:?} does not accept trailing dim {din}"));
        }
        let dout = ws[0];
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return dim_err("linear", format!("bias {:?} != [{dout}]", b.shape()));
            }
        }
        let rows = numel(&xs) / din;
        let wt = transpose2d(weight.value().data(), dout, din);
        let mut out = vec![T::zero(); rows * dout];
        gemm(rows, din, dout, self.value().data(), &wt, &mut out);
        if let Some(b) = bias {
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(b.value().data()) {
                    *o += bv;
                }
            }
        }
        self.graph.add_flops(2 * (rows * din * dout) as u64);
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = dout;
        let (x, w) = (self.value_arc(), weight.value_arc());
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.graph.record("linear", Tensor::from_parts(out_shape, out), &inputs, move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![T::zero(); rows * din];
                gemm(rows, dout, din, gd, w.data(), &mut dx);
                Tensor::from_parts(xs.clone(), dx)
            });
            let dw = needs[1].then(|| {
                let gt = transpose2d(gd, rows, dout);
                let mut dw = vec![T::zero(); dout * din];
                gemm(dout, rows, din, &gt, x.data(), &mut dw);
                Tensor::from_parts(vec![dout, din], dw)
            });
            let mut grads = vec![dx, dw];
            if needs.len() > 2 {
                let db = needs[2].then(|| {
                    let mut db = vec![T::zero(); dout];
                    for row in gd.chunks(dout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    Tensor::from_parts(vec![dout], db)
                });
                grads.push(db);
            }
            grads
        })
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `self: [B,C,H,W]`, `weight: [O, C/groups, kH, kW]`, `bias: [O]`.
    pub fn conv2d(
        &self,
        weight: &Var<'g, T>,
        bias: Option<&Var<'g, T>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var<'g, T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return dim_err("conv2d", format!("expected 4-D input and weight, got {xs:?} and {ws:?}"));
        }
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if groups == 0 || c % groups != 0 || o % groups != 0 || cg != c / groups {
            return dim_err(
                "conv2d",
                format!("channels {c} / out {o} / weight {ws:?} inconsistent with groups {groups}"),
            );
        }
        let (Some(oh), Some(ow)) = (
            conv_out_extent(h, kh, stride, padding),
            conv_out_extent(w, kw, stride, padding),
        ) else {
            return dim_err(
                "conv2d",
                format!("kernel {kh}x{kw} stride {stride} pad {padding} does not fit {h}x{w}"),
            );
        };
        if let Some(b) = bias {
            if b.shape() != [o] {
                return dim_err("conv2d", format!("bias {:?} != [{o}]", b.shape()));
            }
        }
        let og = o / groups;
        let geom = ConvGeom {
            channels: cg,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: oh,
            out_w: ow,
        };
        let (kdim, p) = (geom.col_rows(), geom.col_cols());
        let (xd, wd) = (self.value().data(), weight.value().data());
        let mut out = vec![T::zero(); bsz * o * p];
        for b in 0..bsz {
            for gi in 0..groups {
                let img = &xd[(b * c + gi * cg) * h * w..(b * c + (gi + 1) * cg) * h * w];
                let col = im2col(img, &geom);
                let dst = &mut out[(b * o + gi * og) * p..(b * o + (gi + 1) * og) * p];
                gemm(og, kdim, p, &wd[gi * og * kdim..(gi + 1) * og * kdim], &col, dst);
            }
        }
        if let Some(bv) = bias {
            for b in 0..bsz {
                for (oc, &bias_v) in bv.value().data().iter().enumerate() {
                    for v in &mut out[(b * o + oc) * p..(b * o + oc + 1) * p] {
                        *v += bias_v;
                    }
                }
            }
        }
        self.graph.add_flops(2 * (bsz * o * p * kdim) as u64);
        let (x, wt) = (self.value_arc(), weight.value_arc());
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let out = Tensor::from_parts(vec![bsz, o, oh, ow], out);
        self.graph.record("conv2d", out, &inputs, move |g, needs| {
            let (xd, wd, gd) = (x.data(), wt.data(), g.data());
            let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
            let mut dw = needs[1].then(|| vec![T::zero(); wt.numel()]);
            let wts: Vec<Vec<T>> = if dx.is_some() {
                (0..groups)
                    .map(|gi| transpose2d(&wd[gi * og * kdim..(gi + 1) * og * kdim], og, kdim))
                    .collect()
            } else {
                Vec::new()
            };
            for b in 0..bsz {
                for gi in 0..groups {
                    let gslice = &gd[(b * o + gi * og) * p..(b * o + (gi + 1) * og) * p];
                    if let Some(dw) = dw.as_mut() {
                        let img = &xd[(b * c + gi * cg) * h * w..(b * c + (gi + 1) * cg) * h * w];
                        let col_t = transpose2d(&im2col(img, &geom), kdim, p);
                        gemm(og, p, kdim, gslice, &col_t, &mut dw[gi * og * kdim..(gi + 1) * og * kdim]);
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mut dcol = vec![T::zero(); kdim * p];
                        gemm(kdim, og, p, &wts[gi], gslice, &mut dcol);
                        let dimg = &mut dx[(b * c + gi * cg) * h * w..(b * c + (gi + 1) * cg) * h * w];
                        col2im(&dcol, &geom, dimg);
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wt.shape().to_vec(), d)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gd, bsz, o, p)));
            }
            grads
        })
    }

    /// Transposed 2-D convolution (adjoint of [`Var::conv2d`] w.r.t. its input).
    ///
    /// `self: [B,Cin,H,W]`, `weight: [Cin, Cout, k, k]`; output extent is
    /// `(H-1)*stride + k - 2*padding`, so `k == stride, padding == 0` scales
    /// the spatial extent exactly by `stride`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<'g, T>,
        bias: Option<&Var<'g, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'g, T>> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || stride == 0 {
            return dim_err(
                "conv_transpose2d",
                format!("input {xs:?}, weight {ws:?}, stride {stride} incompatible"),
            );
        }
        let (bsz, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kh, kw) = (ws[1], ws[2], ws[3]);
        let (Some(oh), Some(ow)) = (
            conv_transpose_out_extent(h, kh, stride, padding),
            conv_transpose_out_extent(w, kw, stride, padding),
        ) else {
            return dim_err("conv_transpose2d", "padding exceeds output extent");
        };
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return dim_err("conv_transpose2d", format!("bias {:?} != [{cout}]", b.shape()));
            }
        }
        let geom = ConvGeom {
            channels: cout,
            height: oh,
            width: ow,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: h,
            out_w: w,
        };
        let (kdim, p) = (geom.col_rows(), geom.col_cols());
        let (xd, wd) = (self.value().data(), weight.value().data());
        let w_t = transpose2d(wd, cin, kdim);
        let plane = oh * ow;
        let mut out = vec![T::zero(); bsz * cout * plane];
        for b in 0..bsz {
            let mut col = vec![T::zero(); kdim * p];
            gemm(kdim, cin, p, &w_t, &xd[b * cin * p..(b + 1) * cin * p], &mut col);
            col2im(&col, &geom, &mut out[b * cout * plane..(b + 1) * cout * plane]);
        }
        if let Some(bv) = bias {
            for b in 0..bsz {
                for (oc, &bias_v) in bv.value().data().iter().enumerate() {
                    for v in &mut out[(b * cout + oc) * plane..(b * cout + oc + 1) * plane] {
                        *v += bias_v;
                    }
                }
            }
        }
        self.graph.add_flops(2 * (bsz * cin * p * kdim) as u64);
        let (x, wt) = (self.value_arc(), weight.value_arc());
        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let out = Tensor::from_parts(vec![bsz, cout, oh, ow], out);
        self.graph.record("conv_transpose2d", out, &inputs, move |g, needs| {
            let (xd, wd, gd) = (x.data(), wt.data(), g.data());
            let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
            let mut dw = needs[1].then(|| vec![T::zero(); wt.numel()]);
            for b in 0..bsz {
                let colg = im2col(&gd[b * cout * plane..(b + 1) * cout * plane], &geom);
                if let Some(dx) = dx.as_mut() {
                    gemm(cin, kdim, p, wd, &colg, &mut dx[b * cin * p..(b + 1) * cin * p]);
                }
                if let Some(dw) = dw.as_mut() {
                    let colg_t = transpose2d(&colg, kdim, p);
                    gemm(cin, p, kdim, &xd[b * cin * p..(b + 1) * cin * p], &colg_t, dw);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wt.shape().to_vec(), d)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(gd, bsz, cout, plane)));
            }
            grads
        })
    }
}
