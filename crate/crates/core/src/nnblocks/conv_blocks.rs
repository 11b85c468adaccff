use std::fmt;
use std::str::FromStr;

use gctx_numerics::{Element, Var};

use super::layers::{Conv2d, ConvTranspose2d, LayerNorm, Linear};
use super::params::{Init, Session};
use crate::error::{Error, Result};

fn dims4<T: Element>(op: &str, x: &Var<'_, T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::Numerics(gctx_numerics::Error::Dimension {
            op: "nnblocks",
            msg: format!("{op} expects [B,C,H,W], got {:?}", x.shape()),
        })),
    }
}

fn dim_error(msg: String) -> Error {
    Error::Numerics(gctx_numerics::Error::Dimension { op: "nnblocks", msg })
}

/// Squeeze-and-excitation channel gate.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SeBlock {
    pub fn new(init: &mut Init, name: &str, dim: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || dim % reduction != 0 {
            return Err(Error::config(format!("SE reduction {reduction} does not divide channel count {dim}")));
        }
        let mut s = init.scope(name);
        let hidden = dim / reduction;
        Ok(Self { fc1: Linear::new(&mut s, "fc1", dim, hidden, true)?, fc2: Linear::new(&mut s, "fc2", hidden, dim, true)? })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let [b, c, _, _] = dims4("se_block", x)?;
        let z = x.global_avg_pool()?.reshape(&[b, c])?;
        let z = self.fc1.forward(s, &z)?.gelu()?;
        let gate = self.fc2.forward(s, &z)?.sigmoid()?.reshape(&[b, c, 1, 1])?;
        Ok(x.mul(&gate)?)
    }
}

/// Depthwise 3×3 → GELU → SE → 1×1, plus the residual.
#[derive(Clone, Debug)]
pub struct FusedMbConv {
    pub dw: Conv2d,
    pub se: Option<SeBlock>,
    pub pw: Conv2d,
}

impl FusedMbConv {
    pub fn new(init: &mut Init, name: &str, dim: usize, se_reduction: Option<usize>) -> Result<Self> {
        let mut s = init.scope(name);
        let dw = Conv2d::new(&mut s, "dw", dim, dim, 3, 1, 1, dim, false)?;
        let se = se_reduction.map(|r| SeBlock::new(&mut s, "se", dim, r)).transpose()?;
        let pw = Conv2d::new(&mut s, "pw", dim, dim, 1, 1, 0, 1, false)?;
        Ok(Self { dw, se, pw })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        dims4("fused_mbconv", x)?;
        let mut h = self.dw.forward(s, x)?.gelu()?;
        if let Some(se) = &self.se {
            h = se.forward(s, &h)?;
        }
        Ok(self.pw.forward(s, &h)?.add(x)?)
    }
}

/// Halves the spatial extent and doubles the channels.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub mb: FusedMbConv,
    pub conv: Conv2d,
    pub norm: LayerNorm,
}

impl Downsample {
    pub fn new(init: &mut Init, name: &str, dim: usize, se_reduction: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self {
            mb: FusedMbConv::new(&mut s, "mb", dim, Some(se_reduction))?,
            conv: Conv2d::new(&mut s, "reduce", dim, 2 * dim, 3, 2, 1, 1, false)?,
            norm: LayerNorm::new(&mut s, "norm", 2 * dim)?,
        })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let [_, _, h, w] = dims4("downsample", x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_error(format!("downsample needs even spatial extents, got {h}x{w}")));
        }
        let y = self.mb.forward(s, x)?;
        let y = self.conv.forward(s, &y)?;
        self.norm.forward_nchw(s, &y)
    }
}

/// Upsampler variants compared in the upsampling ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleKind {
    Bilinear,
    BilinearSe,
    TransposedMbConv,
    TransposedMbConvSe,
}

impl UpsampleKind {
    pub const ALL: [UpsampleKind; 4] = [
        UpsampleKind::Bilinear,
        UpsampleKind::BilinearSe,
        UpsampleKind::TransposedMbConv,
        UpsampleKind::TransposedMbConvSe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UpsampleKind::Bilinear => "bilinear",
            UpsampleKind::BilinearSe => "bilinear_se",
            UpsampleKind::TransposedMbConv => "transposed_mbconv",
            UpsampleKind::TransposedMbConvSe => "transposed_mbconv_se",
        }
    }
}

impl fmt::Display for UpsampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UpsampleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        UpsampleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown upsampler '{s}' (expected one of bilinear, bilinear_se, transposed_mbconv, transposed_mbconv_se)"))
    }
}

/// Doubles the spatial extent and halves the channels.
///
/// The transposed variants run a Fused-MBConv (with or without SE) followed
/// by a stride-2 transposed conv; the bilinear variants interpolate, optionally
/// gate with SE, and project with a 1×1 conv. All end in LayerNorm.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub kind: UpsampleKind,
    pub mb: Option<FusedMbConv>,
    pub se: Option<SeBlock>,
    pub expand: Option<ConvTranspose2d>,
    pub proj: Option<Conv2d>,
    pub norm: LayerNorm,
}

impl Upsample {
    pub fn new(init: &mut Init, name: &str, dim: usize, kind: UpsampleKind, se_reduction: usize) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::config(format!("upsample needs an even channel count, got {dim}")));
        }
        let mut s = init.scope(name);
        let half = dim / 2;
        let (mut mb, mut se, mut expand, mut proj) = (None, None, None, None);
        match kind {
            UpsampleKind::TransposedMbConv | UpsampleKind::TransposedMbConvSe => {
                let r = (kind == UpsampleKind::TransposedMbConvSe).then_some(se_reduction);
                mb = Some(FusedMbConv::new(&mut s, "mb", dim, r)?);
                expand = Some(ConvTranspose2d::new(&mut s, "expand", dim, half, 2, true)?);
            }
            UpsampleKind::Bilinear | UpsampleKind::BilinearSe => {
                if kind == UpsampleKind::BilinearSe {
                    se = Some(SeBlock::new(&mut s, "se", dim, se_reduction)?);
                }
                proj = Some(Conv2d::new(&mut s, "proj", dim, half, 1, 1, 0, 1, true)?);
            }
        }
        let norm = LayerNorm::new(&mut s, "norm", half)?;
        Ok(Self { kind, mb, se, expand, proj, norm })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let [_, c, h, w] = dims4("upsample", x)?;
        if c % 2 != 0 {
            return Err(dim_error(format!("upsample needs an even channel count, got {c}")));
        }
        let y = match (&self.mb, &self.expand, &self.proj) {
            (Some(mb), Some(expand), _) => expand.forward(s, &mb.forward(s, x)?)?,
            (_, _, Some(proj)) => {
                let mut y = x.upsample_bilinear2d(2 * h, 2 * w)?;
                if let Some(se) = &self.se {
                    y = se.forward(s, &y)?;
                }
                proj.forward(s, &y)?
            }
            _ => unreachable!("upsample built without a path"),
        };
        self.norm.forward_nchw(s, &y)
    }
}

/// Two-step convolutional stem to S/4 and C channels.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv1: Conv2d,
    pub mb: FusedMbConv,
    pub conv2: Conv2d,
    pub norm: LayerNorm,
}

impl PatchEmbed {
    pub fn new(init: &mut Init, name: &str, in_channels: usize, dim: usize, se_reduction: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self {
            conv1: Conv2d::new(&mut s, "proj", in_channels, dim, 3, 2, 1, 1, true)?,
            mb: FusedMbConv::new(&mut s, "mb", dim, Some(se_reduction))?,
            conv2: Conv2d::new(&mut s, "reduce", dim, dim, 3, 2, 1, 1, false)?,
            norm: LayerNorm::new(&mut s, "norm", dim)?,
        })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, img: &Var<'g, T>) -> Result<Var<'g, T>> {
        let [_, _, h, w] = dims4("patch_embed", img)?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(dim_error(format!("patch embedding needs extents divisible by 4, got {h}x{w}")));
        }
        let y = self.conv1.forward(s, img)?;
        let y = self.mb.forward(s, &y)?;
        let y = self.conv2.forward(s, &y)?;
        self.norm.forward_nchw(s, &y)
    }
}
