use gctx_numerics::{Element, Var};

use super::conv_blocks::FusedMbConv;
use super::layers::{Conv2d, LayerNorm, Linear};
use super::params::{Init, ParamId, Session};
use crate::error::{Error, Result};

fn dim_error(msg: String) -> Error {
    Error::Numerics(gctx_numerics::Error::Dimension { op: "nnblocks", msg })
}

/// `[B,H,W,C]` → `[B·(H/w)·(W/w), w², C]`.
pub fn window_partition_tokens<'g, T: Element>(x: &Var<'g, T>, w: usize) -> Result<Var<'g, T>> {
    let [b, h, wd, c] = *x.shape() else {
        return Err(dim_error(format!("window partition expects [B,H,W,C], got {:?}", x.shape())));
    };
    if w == 0 || h % w != 0 || wd % w != 0 {
        return Err(dim_error(format!("window {w} does not tile {h}x{wd}")));
    }
    let (nh, nw) = (h / w, wd / w);
    Ok(x.reshape(&[b, nh, w, nw, w, c])?.permute(&[0, 1, 3, 2, 4, 5])?.reshape(&[b * nh * nw, w * w, c])?)
}

/// Inverse of [`window_partition_tokens`].
pub fn window_merge_tokens<'g, T: Element>(
    windows: &Var<'g, T>,
    b: usize,
    h: usize,
    wd: usize,
    w: usize,
) -> Result<Var<'g, T>> {
    let [n, l, c] = *windows.shape() else {
        return Err(dim_error(format!("window merge expects [N,w²,C], got {:?}", windows.shape())));
    };
    if w == 0 || h % w != 0 || wd % w != 0 || l != w * w || n != b * (h / w) * (wd / w) {
        return Err(dim_error(format!("windows {:?} do not tile [{b},{h},{wd},·] with w={w}", windows.shape())));
    }
    let (nh, nw) = (h / w, wd / w);
    Ok(windows.reshape(&[b, nh, nw, w, w, c])?.permute(&[0, 1, 3, 2, 4, 5])?.reshape(&[b, h, wd, c])?)
}

/// `[B,C,H,W]` → `[B·(H/w)·(W/w), w², C]`.
pub fn window_partition<'g, T: Element>(x: &Var<'g, T>, w: usize) -> Result<Var<'g, T>> {
    if x.rank() != 4 {
        return Err(dim_error(format!("window partition expects [B,C,H,W], got {:?}", x.shape())));
    }
    window_partition_tokens(&x.permute(&[0, 2, 3, 1])?, w)
}

/// Inverse of [`window_partition`], back to `[B,C,H,W]`.
pub fn window_merge<'g, T: Element>(windows: &Var<'g, T>, b: usize, h: usize, wd: usize, w: usize) -> Result<Var<'g, T>> {
    Ok(window_merge_tokens(windows, b, h, wd, w)?.permute(&[0, 3, 1, 2])?)
}

/// Learnable bias indexed by the relative offset between query and key.
#[derive(Clone, Debug)]
pub struct RelPosBias {
    pub table: ParamId,
    pub window: usize,
    pub heads: usize,
    index: Vec<usize>,
}

impl RelPosBias {
    pub fn new(init: &mut Init, name: &str, window: usize, heads: usize) -> Result<Self> {
        let span = 2 * window - 1;
        let table = init.trunc_normal(name, &[span * span, heads], 0.02)?;
        Ok(Self { table, window, heads, index: Self::index_map(window) })
    }

    /// Table row for every (query, key) pair of a `w×w` window, row-major.
    pub fn index_map(w: usize) -> Vec<usize> {
        let span = 2 * w - 1;
        let mut idx = Vec::with_capacity(w.pow(4));
        for qi in 0..w * w {
            for ki in 0..w * w {
                let dy = qi / w + w - 1 - ki / w;
                let dx = qi % w + w - 1 - ki % w;
                idx.push(dy * span + dx);
            }
        }
        idx
    }

    /// `[heads, w², w²]`.
    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>) -> Result<Var<'g, T>> {
        let l = self.window * self.window;
        let rows = s.param(self.table).gather_rows(&self.index)?;
        Ok(rows.transpose_last()?.reshape(&[self.heads, l, l])?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Local,
    Global,
}

/// Windowed multi-head attention. Local attention projects Q, K and V from
/// the window; global attention projects only K and V and takes its queries
/// from the stage's global tokens.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub kind: AttentionKind,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub qkv: Linear,
    pub proj: Linear,
    pub rel_pos: RelPosBias,
    pub proj_drop: f64,
}

impl WindowAttention {
    pub fn new(init: &mut Init, name: &str, kind: AttentionKind, dim: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("dim {dim} is not divisible by {heads} heads")));
        }
        let mut s = init.scope(name);
        let width = match kind {
            AttentionKind::Local => 3 * dim,
            AttentionKind::Global => 2 * dim,
        };
        let qkv_name = match kind {
            AttentionKind::Local => "qkv",
            AttentionKind::Global => "kv",
        };
        Ok(Self {
            kind,
            dim,
            heads,
            window,
            qkv: Linear::new(&mut s, qkv_name, dim, width, true)?,
            proj: Linear::new(&mut s, "proj", dim, dim, true)?,
            rel_pos: RelPosBias::new(&mut s, "rel_pos", window, heads)?,
            proj_drop: 0.0,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn check_windows<T: Element>(&self, x: &Var<'_, T>) -> Result<(usize, usize)> {
        match *x.shape() {
            [n, l, c] if l == self.window * self.window && c == self.dim => Ok((n, l)),
            _ => Err(dim_error(format!(
                "attention expects [N,{},{}], got {:?}",
                self.window * self.window,
                self.dim,
                x.shape()
            ))),
        }
    }

    /// Splits `[N,L,k·C]` into `k` tensors of `[N,heads,L,head_dim]`.
    fn split_heads<'g, T: Element>(&self, t: &Var<'g, T>, k: usize) -> Result<Vec<Var<'g, T>>> {
        let (n, l) = (t.shape()[0], t.shape()[1]);
        let d = self.head_dim();
        let t = t.reshape(&[n, l, k, self.heads, d])?.permute(&[2, 0, 3, 1, 4])?;
        (0..k)
            .map(|i| Ok(t.narrow(0, i, 1)?.reshape(&[n, self.heads, l, d])?))
            .collect()
    }

    fn attend<'g, T: Element>(
        &self,
        s: &Session<'g, T>,
        q: &Var<'g, T>,
        k: &Var<'g, T>,
        v: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let (n, l) = (q.shape()[0], q.shape()[2]);
        let q = q.scale(1.0 / (self.head_dim() as f64).sqrt())?;
        let logits = q.matmul(&k.transpose_last()?)?.add(&self.rel_pos.forward(s)?)?;
        let attn = logits.softmax(-1)?;
        s.graph().inspect(
            match self.kind {
                AttentionKind::Local => "attn.local",
                AttentionKind::Global => "attn.global",
            },
            attn.value(),
        );
        let out = attn.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[n, l, self.dim])?;
        let out = self.proj.forward(s, &out)?;
        s.dropout(&out, self.proj_drop)
    }

    /// Self-attention inside each window.
    pub fn local_msa<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_windows(x)?;
        if self.kind != AttentionKind::Local {
            return Err(Error::Usage("local_msa called on a global attention layer".into()));
        }
        let qkv = self.split_heads(&self.qkv.forward(s, x)?, 3)?;
        self.attend(s, &qkv[0], &qkv[1], &qkv[2])
    }

    /// Window keys and values attended by the shared global queries
    /// `q_global: [B, heads, w², head_dim]`; windows of image `b` are the
    /// contiguous block `b·nW .. (b+1)·nW` of `x`.
    pub fn global_msa<'g, T: Element>(
        &self,
        s: &Session<'g, T>,
        x: &Var<'g, T>,
        q_global: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let (n, l) = self.check_windows(x)?;
        if self.kind != AttentionKind::Global {
            return Err(Error::Usage("global_msa called on a local attention layer".into()));
        }
        let d = self.head_dim();
        let b = q_global.shape()[0];
        if q_global.shape() != [b, self.heads, l, d] || n % b != 0 {
            return Err(dim_error(format!(
                "global queries {:?} incompatible with {n} windows of [{l},{}]",
                q_global.shape(),
                self.dim
            )));
        }
        let per_image = n / b;
        let q = q_global
            .reshape(&[b, 1, self.heads, l, d])?
            .broadcast_to(&[b, per_image, self.heads, l, d])?
            .reshape(&[n, self.heads, l, d])?;
        let kv = self.split_heads(&self.qkv.forward(s, x)?, 2)?;
        self.attend(s, &q, &kv[0], &kv[1])
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub drop: f64,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self { fc1: Linear::new(&mut s, "fc1", dim, hidden, true)?, fc2: Linear::new(&mut s, "fc2", hidden, dim, true)?, drop: 0.0 })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let h = s.dropout(&self.fc1.forward(s, x)?.gelu()?, self.drop)?;
        s.dropout(&self.fc2.forward(s, &h)?, self.drop)
    }
}

/// Number of stride-2 reductions taking `resolution` down to `window`.
pub fn gtg_reductions(resolution: usize, window: usize) -> Result<usize> {
    if window == 0 || resolution % window != 0 || !(resolution / window).is_power_of_two() {
        return Err(Error::config(format!(
            "global token generator: feature side {resolution} / window {window} is not a power of two"
        )));
    }
    Ok((resolution / window).trailing_zeros() as usize)
}

/// Compresses a stage input to one window of global query tokens.
#[derive(Clone, Debug)]
pub struct GlobalTokenGenerator {
    pub steps: Vec<(FusedMbConv, Conv2d)>,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub resolution: usize,
}

impl GlobalTokenGenerator {
    pub fn new(
        init: &mut Init,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        resolution: usize,
        se_reduction: usize,
    ) -> Result<Self> {
        let reps = gtg_reductions(resolution, window)?;
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("dim {dim} is not divisible by {heads} heads")));
        }
        let mut s = init.scope(name);
        let steps = (0..reps)
            .map(|i| {
                let mut si = s.scope(i);
                Ok((
                    FusedMbConv::new(&mut si, "mb", dim, Some(se_reduction))?,
                    Conv2d::new(&mut si, "reduce", dim, dim, 3, 2, 1, dim, true)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, dim, heads, window, resolution })
    }

    /// `[B,C,Hs,Ws]` → `[B, heads, w², head_dim]`.
    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let b = x.shape()[0];
        if x.shape() != [b, self.dim, self.resolution, self.resolution] {
            return Err(dim_error(format!(
                "token generator expects [B,{},{r},{r}], got {:?}",
                self.dim,
                x.shape(),
                r = self.resolution
            )));
        }
        let mut y = x.clone();
        for (mb, reduce) in &self.steps {
            y = reduce.forward(s, &mb.forward(s, &y)?)?;
        }
        let l = self.window * self.window;
        let d = self.dim / self.heads;
        Ok(y.permute(&[0, 2, 3, 1])?.reshape(&[b, l, self.heads, d])?.permute(&[0, 2, 1, 3])?)
    }
}

/// Pre-norm transformer block around local or global window attention.
#[derive(Clone, Debug)]
pub struct GcVitBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub drop_path: f64,
}

impl GcVitBlock {
    pub fn new(
        init: &mut Init,
        name: &str,
        kind: AttentionKind,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f64,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let hidden = (dim as f64 * mlp_ratio).round() as usize;
        Ok(Self {
            norm1: LayerNorm::new(&mut s, "norm1", dim)?,
            attn: WindowAttention::new(&mut s, "attn", kind, dim, heads, window)?,
            norm2: LayerNorm::new(&mut s, "norm2", dim)?,
            mlp: Mlp::new(&mut s, "mlp", dim, hidden.max(1))?,
            drop_path: 0.0,
        })
    }

    pub fn kind(&self) -> AttentionKind {
        self.attn.kind
    }

    /// Channel-last form: `x: [B,H,W,C]`.
    pub fn forward_tokens<'g, T: Element>(
        &self,
        s: &Session<'g, T>,
        x: &Var<'g, T>,
        q_global: Option<&Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let [b, h, w, _] = *x.shape() else {
            return Err(dim_error(format!("block expects [B,H,W,C], got {:?}", x.shape())));
        };
        let win = self.attn.window;
        let windows = window_partition_tokens(&self.norm1.forward(s, x)?, win)?;
        let y = match (self.attn.kind, q_global) {
            (AttentionKind::Local, _) => self.attn.local_msa(s, &windows)?,
            (AttentionKind::Global, Some(q)) => self.attn.global_msa(s, &windows, q)?,
            (AttentionKind::Global, None) => {
                return Err(Error::Usage("global attention block needs global query tokens".into()))
            }
        };
        let y = window_merge_tokens(&y, b, h, w, win)?;
        let x = x.add(&s.drop_path(&y, self.drop_path)?)?;
        let y = self.mlp.forward(s, &self.norm2.forward(s, &x)?)?;
        Ok(x.add(&s.drop_path(&y, self.drop_path)?)?)
    }

    /// `x: [B,C,H,W]`.
    pub fn forward<'g, T: Element>(
        &self,
        s: &Session<'g, T>,
        x: &Var<'g, T>,
        q_global: Option<&Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let y = self.forward_tokens(s, &x.permute(&[0, 2, 3, 1])?, q_global)?;
        Ok(y.permute(&[0, 3, 1, 2])?)
    }
}

/// One resolution level: token generator plus alternating local/global blocks.
#[derive(Clone, Debug)]
pub struct GcVitStage {
    pub gtg: GlobalTokenGenerator,
    pub blocks: Vec<GcVitBlock>,
}

pub struct StageSpec {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub window: usize,
    pub resolution: usize,
    pub mlp_ratio: f64,
    pub se_reduction: usize,
    pub drop: f64,
    pub drop_path: f64,
}

impl GcVitStage {
    pub fn new(init: &mut Init, name: &str, spec: &StageSpec) -> Result<Self> {
        let mut s = init.scope(name);
        let gtg = GlobalTokenGenerator::new(
            &mut s,
            "gtg",
            spec.dim,
            spec.heads,
            spec.window,
            spec.resolution,
            spec.se_reduction,
        )?;
        let mut bs = s.scope("blocks");
        let blocks = (0..spec.depth)
            .map(|i| {
                let kind = if i % 2 == 0 { AttentionKind::Local } else { AttentionKind::Global };
                let mut blk = GcVitBlock::new(&mut bs, &i.to_string(), kind, spec.dim, spec.heads, spec.window, spec.mlp_ratio)?;
                blk.drop_path = spec.drop_path;
                blk.mlp.drop = spec.drop;
                blk.attn.proj_drop = spec.drop;
                Ok(blk)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { gtg, blocks })
    }

    /// `[B,C,H,W]` → same shape.
    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let q = self.gtg.forward(s, x)?;
        let mut t = x.permute(&[0, 2, 3, 1])?;
        for blk in &self.blocks {
            t = blk.forward_tokens(s, &t, Some(&q))?;
        }
        Ok(t.permute(&[0, 3, 1, 2])?)
    }
}
