use crate::error::{Error, Result};

/// Integer class labels, `[H,W]` or `[B,H,W]`, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if !(2..=3).contains(&shape.len()) {
            return Err(Error::Data(format!("label mask must be [H,W] or [B,H,W], got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Data(format!("label mask {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { shape: vec![h, w], data: vec![0; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Self { shape: vec![h, w], data }
    }

    /// Stacks equally sized 2-D masks into `[B,H,W]`.
    pub fn stack(masks: &[&LabelMask]) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::Data("cannot stack zero masks".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if m.planes() != 1 || m.height() != h || m.width() != w {
                return Err(Error::Data(format!("cannot stack mask {:?} with [{h}, {w}]", m.shape)));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Self { shape: vec![masks.len(), h, w], data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.shape[self.shape.len() - 2]
    }

    pub fn width(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    /// Number of `[H,W]` planes (1 for a 2-D mask).
    pub fn planes(&self) -> usize {
        if self.shape.len() == 3 { self.shape[0] } else { 1 }
    }

    pub fn plane(&self, i: usize) -> LabelMask {
        let n = self.height() * self.width();
        Self { shape: vec![self.height(), self.width()], data: self.data[i * n..(i + 1) * n].to_vec() }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width() + x]
    }

    /// Checks every label is below `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.data.iter().position(|&v| v as usize >= k) {
            Some(i) => Err(Error::Data(format!("label {} at flat index {i} is not below K={k}", self.data[i]))),
            None => Ok(()),
        }
    }

    /// Pixel count per class `0..k`; labels ≥ k are ignored.
    pub fn class_counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for &v in &self.data {
            if (v as usize) < k {
                c[v as usize] += 1;
            }
        }
        c
    }
}
