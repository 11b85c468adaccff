use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nnblocks::{gtg_reductions, UpsampleKind};

/// One `key = value` line of a flat config document.
#[derive(Clone, Debug, PartialEq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push(KvEntry {
                line: i + 1,
                key: k.trim().to_string(),
                value: v.trim().to_string(),
            }),
            _ => errors.push(format!("line {}: expected key = value, got '{line}'", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errors))
    }
}

pub(crate) fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
}

pub(crate) fn parse_list<const N: usize>(key: &str, v: &str) -> Result<[usize; N], String> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.len() != N {
        return Err(format!("{key}: expected {N} comma-separated values, got '{v}'"));
    }
    let mut out = [0; N];
    for (o, s) in out.iter_mut().zip(items) {
        *o = parse_num(key, s)?;
    }
    Ok(out)
}

fn join<const N: usize>(v: &[usize; N]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Architecture hyper-parameters; the network is a deterministic function
/// of this record and `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub img_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    /// Encoder stage depths; the last stage is the bottleneck.
    pub depths: [usize; 4],
    /// Decoder stage depths, listed deepest first.
    pub decoder_depths: [usize; 3],
    pub heads: [usize; 4],
    pub window_sizes: [usize; 4],
    pub mlp_ratio: f64,
    pub se_reduction: usize,
    pub upsampler: UpsampleKind,
    pub drop_rate: f64,
    pub drop_path_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            img_size: 224,
            in_channels: 3,
            num_classes: 9,
            embed_dim: 64,
            depths: [2, 2, 6, 2],
            decoder_depths: [2, 2, 2],
            heads: [2, 4, 8, 16],
            window_sizes: [7, 7, 14, 7],
            mlp_ratio: 3.0,
            se_reduction: 4,
            upsampler: UpsampleKind::TransposedMbConvSe,
            drop_rate: 0.0,
            drop_path_rate: 0.0,
            seed: 0,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "img_size",
    "in_channels",
    "num_classes",
    "embed_dim",
    "depths",
    "decoder_depths",
    "heads",
    "window_sizes",
    "mlp_ratio",
    "se_reduction",
    "upsampler",
    "drop_rate",
    "drop_path_rate",
    "seed",
];

impl ModelConfig {
    /// Small configuration used for overfitting and ablation runs.
    pub fn test_scale(num_classes: usize) -> Self {
        Self {
            img_size: 64,
            num_classes,
            embed_dim: 16,
            depths: [2, 2, 2, 2],
            window_sizes: [4, 4, 4, 2],
            ..Self::default()
        }
    }

    /// Smallest configuration used by whole-model gradient checks.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            img_size: 32,
            num_classes,
            embed_dim: 8,
            depths: [2, 2, 2, 2],
            window_sizes: [4, 4, 2, 1],
            ..Self::default()
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.embed_dim << i)
    }

    /// Feature side at each encoder stage.
    pub fn resolutions(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.img_size / 4 >> i)
    }

    /// Applies one key; `None` when the key is not a model key.
    pub fn set(&mut self, key: &str, v: &str) -> Option<Result<(), String>> {
        let r = match key {
            "img_size" => parse_num(key, v).map(|x| self.img_size = x),
            "in_channels" => parse_num(key, v).map(|x| self.in_channels = x),
            "num_classes" => parse_num(key, v).map(|x| self.num_classes = x),
            "embed_dim" => parse_num(key, v).map(|x| self.embed_dim = x),
            "depths" => parse_list(key, v).map(|x| self.depths = x),
            "decoder_depths" => parse_list(key, v).map(|x| self.decoder_depths = x),
            "heads" => parse_list(key, v).map(|x| self.heads = x),
            "window_sizes" => parse_list(key, v).map(|x| self.window_sizes = x),
            "mlp_ratio" => parse_num(key, v).map(|x| self.mlp_ratio = x),
            "se_reduction" => parse_num(key, v).map(|x| self.se_reduction = x),
            "upsampler" => v.parse().map(|x| self.upsampler = x),
            "drop_rate" => parse_num(key, v).map(|x| self.drop_rate = x),
            "drop_path_rate" => parse_num(key, v).map(|x| self.drop_path_rate = x),
            "seed" => parse_num(key, v).map(|x| self.seed = x),
            _ => return None,
        };
        Some(r)
    }

    /// Parses a document holding only model keys.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        for e in parse_kv(text)? {
            match cfg.set(&e.key, &e.value) {
                Some(Ok(())) => {}
                Some(Err(msg)) => errors.push(format!("line {}: {msg}", e.line)),
                None => errors.push(format!("line {}: unknown key '{}'", e.line, e.key)),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key in fixed order, one per line.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "img_size = {}", self.img_size);
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "depths = {}", join(&self.depths));
        let _ = writeln!(s, "decoder_depths = {}", join(&self.decoder_depths));
        let _ = writeln!(s, "heads = {}", join(&self.heads));
        let _ = writeln!(s, "window_sizes = {}", join(&self.window_sizes));
        let _ = writeln!(s, "mlp_ratio = {:?}", self.mlp_ratio);
        let _ = writeln!(s, "se_reduction = {}", self.se_reduction);
        let _ = writeln!(s, "upsampler = {}", self.upsampler);
        let _ = writeln!(s, "drop_rate = {:?}", self.drop_rate);
        let _ = writeln!(s, "drop_path_rate = {:?}", self.drop_path_rate);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.in_channels == 0 {
            errs.push("in_channels must be positive".to_string());
        }
        if self.num_classes < 2 {
            errs.push(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.num_classes > 256 {
            errs.push(format!("num_classes must fit 8-bit labels, got {}", self.num_classes));
        }
        if self.embed_dim == 0 {
            errs.push("embed_dim must be positive".to_string());
        }
        if !(self.mlp_ratio > 0.0) {
            errs.push(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        for (name, p) in [("drop_rate", self.drop_rate), ("drop_path_rate", self.drop_path_rate)] {
            if !(0.0..1.0).contains(&p) {
                errs.push(format!("{name} must be in [0,1), got {p}"));
            }
        }
        if self.img_size == 0 || self.img_size % 32 != 0 {
            errs.push(format!(
                "img_size {} must be a positive multiple of 32 (stem /4, then three /2 stages)",
                self.img_size
            ));
        }
        for (i, &d) in self.depths.iter().enumerate() {
            if d < 2 {
                errs.push(format!("depths[{i}] = {d}: each stage needs at least 2 blocks"));
            }
        }
        for (i, &d) in self.decoder_depths.iter().enumerate() {
            if d < 2 {
                errs.push(format!("decoder_depths[{i}] = {d}: each stage needs at least 2 blocks"));
            }
        }
        let dims = self.dims();
        if self.se_reduction == 0 || dims.iter().any(|d| d % self.se_reduction != 0) {
            errs.push(format!("se_reduction {} must divide every stage width {dims:?}", self.se_reduction));
        }
        let valid_size = self.img_size > 0 && self.img_size % 32 == 0;
        for i in 0..4 {
            let (dim, heads, w) = (dims[i], self.heads[i], self.window_sizes[i]);
            if heads == 0 || dim % heads != 0 {
                errs.push(format!("stage {i}: width {dim} is not divisible by heads {heads}"));
            }
            if !valid_size {
                continue;
            }
            let res = self.resolutions()[i];
            if w == 0 || res % w != 0 {
                errs.push(format!("stage {i}: window size {w} does not divide feature side {res}"));
            } else if gtg_reductions(res, w).is_err() {
                errs.push(format!("stage {i}: feature side {res} / window size {w} is not a power of two"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
