use std::fmt::Write as _;

use super::AdamW;
use crate::error::{Error, Result};
use crate::model::{parse_num, ModelConfig};
use crate::objectives::LossWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<u64>,
    pub loss_weights: LossWeights,
    /// Evaluate every this many epochs.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: u64,
    pub seed: u64,
    pub shuffle: bool,
    pub augment: bool,
    pub grad_clip: Option<f64>,
    /// Stop as soon as the monitored mean DSC reaches this value.
    pub stop_at_dsc: Option<f64>,
    /// Log wall time as 0 so logs of identical runs are byte-identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 24,
            max_epochs: 150,
            max_steps: None,
            loss_weights: LossWeights::default(),
            eval_every: 1,
            patience: 10,
            seed: 0,
            shuffle: true,
            augment: true,
            grad_clip: None,
            stop_at_dsc: None,
            deterministic: false,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "max_epochs",
    "max_steps",
    "w_dice",
    "w_ce",
    "eval_every",
    "patience",
    "train_seed",
    "shuffle",
    "augment",
    "grad_clip",
    "stop_at_dsc",
    "deterministic",
];

fn parse_opt<N: std::str::FromStr>(key: &str, v: &str) -> Result<Option<N>, String> {
    if v == "none" { Ok(None) } else { parse_num(key, v).map(Some) }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("{key}: expected true/false, got '{v}'")),
    }
}

fn opt_text<N: std::fmt::Display>(v: &Option<N>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Applies one key; `None` when the key is not a training key.
    pub fn set(&mut self, key: &str, v: &str) -> Option<Result<(), String>> {
        let r = match key {
            "learning_rate" => parse_num(key, v).map(|x| self.learning_rate = x),
            "weight_decay" => parse_num(key, v).map(|x| self.weight_decay = x),
            "beta1" => parse_num(key, v).map(|x| self.beta1 = x),
            "beta2" => parse_num(key, v).map(|x| self.beta2 = x),
            "eps" => parse_num(key, v).map(|x| self.eps = x),
            "batch_size" => parse_num(key, v).map(|x| self.batch_size = x),
            "max_epochs" => parse_num(key, v).map(|x| self.max_epochs = x),
            "max_steps" => parse_opt(key, v).map(|x| self.max_steps = x),
            "w_dice" => parse_num(key, v).map(|x| self.loss_weights.w_dice = x),
            "w_ce" => parse_num(key, v).map(|x| self.loss_weights.w_ce = x),
            "eval_every" => parse_num(key, v).map(|x| self.eval_every = x),
            "patience" => parse_num(key, v).map(|x| self.patience = x),
            "train_seed" => parse_num(key, v).map(|x| self.seed = x),
            "shuffle" => parse_bool(key, v).map(|x| self.shuffle = x),
            "augment" => parse_bool(key, v).map(|x| self.augment = x),
            "grad_clip" => parse_opt(key, v).map(|x| self.grad_clip = x),
            "stop_at_dsc" => parse_opt(key, v).map(|x| self.stop_at_dsc = x),
            "deterministic" => parse_bool(key, v).map(|x| self.deterministic = x),
            _ => return None,
        };
        Some(r)
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {:?}", self.learning_rate);
        let _ = writeln!(s, "weight_decay = {:?}", self.weight_decay);
        let _ = writeln!(s, "beta1 = {:?}", self.beta1);
        let _ = writeln!(s, "beta2 = {:?}", self.beta2);
        let _ = writeln!(s, "eps = {:?}", self.eps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "max_steps = {}", opt_text(&self.max_steps));
        let _ = writeln!(s, "w_dice = {:?}", self.loss_weights.w_dice);
        let _ = writeln!(s, "w_ce = {:?}", self.loss_weights.w_ce);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "train_seed = {}", self.seed);
        let _ = writeln!(s, "shuffle = {}", self.shuffle);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "grad_clip = {}", opt_text(&self.grad_clip));
        let _ = writeln!(s, "stop_at_dsc = {}", opt_text(&self.stop_at_dsc));
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) {
            errs.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errs.push(format!("{name} must be in [0,1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            errs.push(format!("eps must be positive, got {}", self.eps));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            errs.push("eval_every must be at least 1".into());
        }
        if self.patience == 0 {
            errs.push("patience must be at least 1".into());
        }
        if let Err(Error::Config(m)) = self.loss_weights.validate() {
            errs.extend(m);
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            errs.push("grad_clip must be positive".into());
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }
}

/// Model and training settings read from one flat `key = value` document.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Applies `entries` in order; every unknown or malformed key is reported.
    pub fn apply<'a>(&mut self, entries: impl IntoIterator<Item = (String, &'a str, &'a str)>) -> Result<()> {
        let mut errs = Vec::new();
        for (origin, k, v) in entries {
            let r = self.model.set(k, v).or_else(|| self.train.set(k, v));
            match r {
                Some(Ok(())) => {}
                Some(Err(m)) => errs.push(format!("{origin}: {m}")),
                None => errs.push(format!("{origin}: unknown key '{k}'")),
            }
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let entries = crate::model::parse_kv(text)?;
        let mut cfg = Self::default();
        cfg.apply(entries.iter().map(|e| (format!("line {}", e.line), e.key.as_str(), e.value.as_str())))?;
        Ok(cfg)
    }

    /// Runs both validators and reports every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for r in [self.model.validate(), self.train.validate()] {
            if let Err(Error::Config(m)) = r {
                errs.extend(m);
            }
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }

    pub fn to_kv_text(&self) -> String {
        format!("{}{}", self.model.to_kv_text(), self.train.to_kv_text())
    }
}
