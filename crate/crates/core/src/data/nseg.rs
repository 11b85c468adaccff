//! Raw tensor files: 16-byte header (`NSEG`, version, dtype, rank as
//! big-endian u32), big-endian u32 extents, then little-endian scalars.

use std::path::Path;

use gctx_numerics::Tensor;

use crate::error::{Error, Result};

pub const NSEG_MAGIC: &[u8; 4] = b"NSEG";
pub const NSEG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NsegDtype {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl NsegDtype {
    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(Self::F32),
            2 => Some(Self::F64),
            3 => Some(Self::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
            Self::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NsegTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl NsegTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
            Self::U8 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> NsegDtype {
        match self {
            Self::F32(_) => NsegDtype::F32,
            Self::F64(_) => NsegDtype::F64,
            Self::U8 { .. } => NsegDtype::U8,
        }
    }

    /// Intensities as `f32`; 8-bit data is scaled by 1/255.
    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Self::F32(t) => t.clone(),
            Self::F64(t) => t.cast(),
            Self::U8 { shape, data } => {
                Tensor::new(shape, data.iter().map(|&v| v as f32 / 255.0).collect()).expect("validated shape")
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(16 + 4 * shape.len() + shape.iter().product::<usize>() * self.dtype().width());
        out.extend_from_slice(NSEG_MAGIC);
        out.extend_from_slice(&NSEG_VERSION.to_be_bytes());
        out.extend_from_slice(&(self.dtype() as u32).to_be_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_be_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match self {
            Self::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::U8 { data, .. } => out.extend_from_slice(data),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        if bytes.len() < 16 || &bytes[..4] != NSEG_MAGIC {
            return Err(Error::Integrity("not an NSEG tensor file".into()));
        }
        let version = be(4);
        if version != NSEG_VERSION {
            return Err(Error::Version { found: version, expected: NSEG_VERSION });
        }
        let dtype = NsegDtype::from_code(be(8)).ok_or_else(|| Error::Integrity(format!("unknown dtype code {}", be(8))))?;
        let rank = be(12) as usize;
        let data_start = 16 + 4 * rank;
        if bytes.len() < data_start {
            return Err(Error::Integrity("NSEG header truncated".into()));
        }
        let shape: Vec<usize> = (0..rank).map(|i| be(16 + 4 * i) as usize).collect();
        let n: usize = shape.iter().product();
        let body = &bytes[data_start..];
        if body.len() != n * dtype.width() {
            return Err(Error::Integrity(format!(
                "NSEG payload has {} bytes, shape {shape:?} needs {}",
                body.len(),
                n * dtype.width()
            )));
        }
        Ok(match dtype {
            NsegDtype::F32 => Self::F32(
                Tensor::new(&shape, body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                    .expect("size checked"),
            ),
            NsegDtype::F64 => Self::F64(
                Tensor::new(&shape, body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                    .expect("size checked"),
            ),
            NsegDtype::U8 => Self::U8 { shape, data: body.to_vec() },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Integrity(m) => Error::Integrity(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
