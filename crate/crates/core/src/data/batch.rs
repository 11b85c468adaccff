use gctx_numerics::{Rng, Tensor};

use super::dataset::{Dataset, SegSample};
use crate::error::{Error, Result};
use crate::objectives::LabelMask;

/// Geometric transform drawn by [`augment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Flips {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, applied after the flips.
    pub rot90: u8,
}

impl Flips {
    pub fn draw(rng: &mut Rng) -> Self {
        let hflip = rng.bernoulli(0.5);
        let vflip = rng.bernoulli(0.5);
        let rot90 = rng.below(4) as u8;
        Self { hflip, vflip, rot90 }
    }

    /// Output extents for an `h×w` input.
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.rot90 % 2 == 1 { (w, h) } else { (h, w) }
    }

    /// Source pixel for output position `(y, x)`.
    pub fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        // Undo the rotation into the flipped frame, then undo the flips.
        let (fy, fx) = match self.rot90 % 4 {
            0 => (y, x),
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        };
        let fy = if self.vflip { h - 1 - fy } else { fy };
        let fx = if self.hflip { w - 1 - fx } else { fx };
        (fy, fx)
    }

    fn gather(&self, h: usize, w: usize) -> Vec<usize> {
        let (oh, ow) = self.out_size(h, w);
        let mut idx = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = self.source(y, x, h, w);
                idx.push(sy * w + sx);
            }
        }
        idx
    }

    pub fn apply_mask(&self, mask: &LabelMask) -> LabelMask {
        let (h, w) = (mask.height(), mask.width());
        let (oh, ow) = self.out_size(h, w);
        let idx = self.gather(h, w);
        LabelMask::new(&[oh, ow], idx.iter().map(|&i| mask.data()[i]).collect()).expect("permuted shape")
    }

    pub fn apply_sample(&self, s: &SegSample) -> SegSample {
        let (h, w) = s.size();
        let (oh, ow) = self.out_size(h, w);
        let idx = self.gather(h, w);
        let c = s.channels();
        let src = s.image.data();
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            data.extend(idx.iter().map(|&i| src[ci * h * w + i]));
        }
        let spacing = if self.rot90 % 2 == 1 { [s.spacing[1], s.spacing[0]] } else { s.spacing };
        SegSample {
            id: s.id.clone(),
            image: Tensor::new(&[c, oh, ow], data).expect("permuted shape"),
            mask: self.apply_mask(&s.mask),
            spacing,
        }
    }
}

/// Random flips (p = 0.5 each) and a random multiple of 90° rotation,
/// applied identically to image and mask.
pub fn augment(sample: &SegSample, rng: &mut Rng) -> SegSample {
    Flips::draw(rng).apply_sample(sample)
}

/// Index batches for one epoch: manifest order, or a permutation drawn from
/// `rng` when `shuffle` is set. The last batch may be short.
pub fn batch_plan(n: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Usage("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Plan for epoch `epoch` under `seed`; independent of any other epoch.
pub fn epoch_plan(n: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    batch_plan(n, batch_size, shuffle, &mut Rng::new(seed).fork(epoch))
}

/// Stacks samples into `images [B,C,H,W]` and `masks [B,H,W]`.
pub fn collate(samples: &[&SegSample]) -> Result<(Tensor<f32>, LabelMask)> {
    let first = samples.first().ok_or_else(|| Error::Usage("cannot collate zero samples".into()))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.numel());
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::Data(format!("sample '{}' has shape {:?}, batch needs {shape:?}", s.id, s.image.shape())));
        }
        data.extend_from_slice(s.image.data());
    }
    let images = Tensor::new(&[samples.len(), shape[0], shape[1], shape[2]], data)?;
    let masks = LabelMask::stack(&samples.iter().map(|s| &s.mask).collect::<Vec<_>>())?;
    Ok((images, masks))
}

/// Batches of one epoch in planned order.
pub fn batches<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut Rng,
) -> Result<impl Iterator<Item = Result<(Tensor<f32>, LabelMask)>> + 'a> {
    let plan = batch_plan(dataset.len(), batch_size, shuffle, rng)?;
    Ok(plan.into_iter().map(move |idx| collate(&idx.iter().map(|&i| &dataset.samples[i]).collect::<Vec<_>>())))
}
