use gctx_numerics::{Element, Tensor, Var};

use super::LabelMask;
use crate::error::{Error, Result};

pub const DEFAULT_SMOOTH: f64 = 1e-5;

/// Mixing weights of the dice and cross-entropy terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_dice: f64,
    pub w_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_dice: 0.7, w_ce: 0.3 }
    }
}

impl LossWeights {
    pub fn new(w_dice: f64, w_ce: f64) -> Result<Self> {
        let w = Self { w_dice, w_ce };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.w_dice)
            && (0.0..=1.0).contains(&self.w_ce)
            && (self.w_dice + self.w_ce - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "loss weights must lie in [0,1] and sum to 1, got dice {} + ce {}",
                self.w_dice, self.w_ce
            )))
        }
    }
}

/// Checks `logits [B,K,H,W]` against `target [B,H,W]` and returns `K`.
fn check_pair<T: Element>(logits: &Var<'_, T>, target: &LabelMask) -> Result<usize> {
    let s = logits.shape();
    let ok = s.len() == 4
        && target.planes() == s[0]
        && target.height() == s[2]
        && target.width() == s[3]
        && (target.shape().len() == 3 || s[0] == 1);
    if !ok {
        return Err(Error::Numerics(gctx_numerics::Error::Dimension {
            op: "loss",
            msg: format!("logits {s:?} do not match target {:?}", target.shape()),
        }));
    }
    target.validate(s[1])?;
    Ok(s[1])
}

/// One-hot target laid out like the logits, `[B,K,H,W]`.
fn one_hot<T: Element>(target: &LabelMask, k: usize) -> Tensor<T> {
    let (b, hw) = (target.planes(), target.height() * target.width());
    let mut t = Tensor::zeros(&[b, k, target.height(), target.width()]);
    let d = t.data_mut();
    for bi in 0..b {
        for p in 0..hw {
            let c = target.data()[bi * hw + p] as usize;
            d[(bi * k + c) * hw + p] = T::one();
        }
    }
    t
}

/// `[B,K,H,W]` → `[K, B·H·W]`.
fn per_class<'g, T: Element>(x: &Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.shape().to_vec();
    Ok(x.permute(&[1, 0, 2, 3])?.reshape(&[s[1], s[0] * s[2] * s[3]])?)
}

/// Soft dice loss over all classes, background included.
pub fn dice_loss<'g, T: Element>(logits: &Var<'g, T>, target: &LabelMask, smooth: f64) -> Result<Var<'g, T>> {
    let k = check_pair(logits, target)?;
    if !(smooth > 0.0) {
        return Err(Error::config(format!("dice smooth must be positive, got {smooth}")));
    }
    let g = logits.graph();
    let p = logits.softmax(1)?;
    let t = g.constant(one_hot::<T>(target, k));
    let inter = per_class(&p.mul(&t)?)?.sum_axis(1, false)?;
    let psum = per_class(&p)?.sum_axis(1, false)?;
    let tsum = per_class(&t)?.sum_axis(1, false)?;
    let num = inter.scale(2.0)?.add_scalar(smooth)?;
    let den = psum.add(&tsum)?.add_scalar(smooth)?;
    num.div(&den)?.mean_all()?.neg()?.add_scalar(1.0).map_err(Into::into)
}

/// Mean negative log-likelihood of the target class over every pixel.
pub fn ce_loss<'g, T: Element>(logits: &Var<'g, T>, target: &LabelMask) -> Result<Var<'g, T>> {
    let k = check_pair(logits, target)?;
    let g = logits.graph();
    let lp = logits.log_softmax(1)?;
    let t = g.constant(one_hot::<T>(target, k));
    let n = target.data().len() as f64;
    lp.mul(&t)?.sum_all()?.scale(-1.0 / n).map_err(Into::into)
}

pub fn combined_loss<'g, T: Element>(
    logits: &Var<'g, T>,
    target: &LabelMask,
    weights: &LossWeights,
) -> Result<Var<'g, T>> {
    weights.validate()?;
    let d = dice_loss(logits, target, DEFAULT_SMOOTH)?;
    let c = ce_loss(logits, target)?;
    d.scale(weights.w_dice)?.add(&c.scale(weights.w_ce)?).map_err(Into::into)
}
