use std::path::Path;

use gctx_numerics::{RngState, Tensor};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::net::GCtxUNet;
use crate::error::{Error, Result};
use crate::nnblocks::ParamStore;
use crate::trainer::OptState;

pub const MAGIC: &[u8; 4] = b"GCTX";
pub const VERSION: u32 = 1;

/// Everything needed to rebuild a model and continue its training run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: GCtxUNet<f32>,
    pub opt: Option<OptState<f32>>,
    /// Optimizer steps taken by the trainer.
    pub step: u64,
    pub rng: RngState,
    /// Free-form `key=value` lines owned by the caller (trainer bookkeeping).
    pub meta: String,
}

/// First 8 bytes of SHA-256, little-endian.
pub fn checksum64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn floats(&mut self, data: &[f32]) {
        self.0.reserve(data.len() * 4);
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("invalid UTF-8 text field".into()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Integrity("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Checkpoint {
    /// Model-only checkpoint.
    pub fn from_model(model: &GCtxUNet<f32>) -> Self {
        Self {
            model: model.clone(),
            opt: None,
            step: 0,
            rng: gctx_numerics::Rng::new(model.config.seed).state(),
            meta: String::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = &self.model.params;
        let mut w = Writer(Vec::with_capacity(params.num_scalars() * 4 + 4096));
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.text(&self.model.config.to_kv_text());
        w.u32(params.len() as u32);
        for (name, t) in params.iter() {
            w.text(name);
            w.u32(t.rank() as u32);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            w.floats(t.data());
        }
        match &self.opt {
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                for (m, v) in opt.m.iter().zip(&opt.v) {
                    w.floats(m.data());
                    w.floats(v.data());
                }
            }
            None => w.u8(0),
        }
        w.u64(self.step);
        w.u64(self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        w.text(&self.meta);
        let sum = checksum64(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::Integrity("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if checksum64(body) != stored {
            return Err(Error::Integrity("checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let config = ModelConfig::from_kv_text(&r.text()?)?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.text()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let data = r.floats(shape.iter().product())?;
            params.insert(&name, Tensor::new(&shape, data).map_err(|e| Error::Integrity(e.to_string()))?)?;
        }
        let opt = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut m = Vec::with_capacity(n);
                let mut v = Vec::with_capacity(n);
                for (_, t) in params.iter() {
                    m.push(Tensor::new(t.shape(), r.floats(t.numel())?).expect("shape from parameter"));
                    v.push(Tensor::new(t.shape(), r.floats(t.numel())?).expect("shape from parameter"));
                }
                Some(OptState { m, v, step })
            }
            f => return Err(Error::Integrity(format!("bad optimizer flag {f}"))),
        };
        let step = r.u64()?;
        let rng = RngState { seed: r.u64()?, stream: r.u64()?, word_pos: r.u128()? };
        let meta = r.text()?;
        if r.pos != body.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let model = GCtxUNet::with_params(&config, params)?;
        Ok(Self { model, opt, step, rng, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Value of `key` in the meta lines.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.lines().find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
    }
}

impl GCtxUNet<f32> {
    /// Rebuilds the structure for `config` and installs `params`, which must
    /// match the built registry name for name and shape for shape.
    pub fn with_params(config: &ModelConfig, params: ParamStore<f32>) -> Result<Self> {
        let mut model = GCtxUNet::build(config)?;
        if model.params.names() != params.names() {
            return Err(Error::Integrity(format!(
                "parameter registry does not match the configuration ({} vs {} tensors)",
                params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            if model.params.get(id).shape() != params.get(id).shape() {
                return Err(Error::Integrity(format!(
                    "parameter '{}' has shape {:?}, configuration needs {:?}",
                    params.names()[id.0],
                    params.get(id).shape(),
                    model.params.get(id).shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }
}
