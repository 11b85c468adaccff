use gctx_numerics::{Element, Var};

use super::params::{Init, ParamId, Session};
use crate::error::Result;

const PROJ_STD: f64 = 0.02;

/// Affine map over the trailing axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        let mut s = init.scope(name);
        let weight = s.trunc_normal("weight", &[dout, din], PROJ_STD)?;
        let bias = if bias { Some(s.zeros("bias", &[dout])?) } else { None };
        Ok(Self { weight, bias, din, dout })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.linear(s.param(self.weight), self.bias.map(|b| s.param(b)))?)
    }
}

/// 2-D convolution, PyTorch-default uniform initialisation.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let fan_in = (cin / groups) * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = s.uniform("weight", &[cout, cin / groups, kernel, kernel], bound)?;
        let bias = if bias { Some(s.uniform("bias", &[cout], bound)?) } else { None };
        Ok(Self { weight, bias, stride, padding, groups })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv2d(
            s.param(self.weight),
            self.bias.map(|b| s.param(b)),
            self.stride,
            self.padding,
            self.groups,
        )?)
    }
}

/// Transposed convolution with `kernel == stride`: exact ×stride expansion.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl ConvTranspose2d {
    pub fn new(init: &mut Init, name: &str, cin: usize, cout: usize, stride: usize, bias: bool) -> Result<Self> {
        let mut s = init.scope(name);
        let bound = 1.0 / ((cout * stride * stride) as f64).sqrt();
        let weight = s.uniform("weight", &[cin, cout, stride, stride], bound)?;
        let bias = if bias { Some(s.uniform("bias", &[cout], bound)?) } else { None };
        Ok(Self { weight, bias, stride })
    }

    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv_transpose2d(s.param(self.weight), self.bias.map(|b| s.param(b)), self.stride, 0)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self { gamma: s.ones("weight", &[dim])?, beta: s.zeros("bias", &[dim])?, eps: 1e-5 })
    }

    /// Normalises the trailing axis.
    pub fn forward<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.layer_norm(s.param(self.gamma), s.param(self.beta), self.eps)?)
    }

    /// Normalises the channel axis of `[B,C,H,W]`.
    pub fn forward_nchw<'g, T: Element>(&self, s: &Session<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.forward(s, &x.permute(&[0, 2, 3, 1])?)?;
        Ok(y.permute(&[0, 3, 1, 2])?)
    }
}
