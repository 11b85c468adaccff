use std::fmt;
use std::time::Instant;

use gctx_numerics::{Graph, Rng};

use super::{adamw_step, clip_grad_norm, OptState, TrainConfig};
use crate::data::{augment, collate, epoch_plan, Dataset};
use crate::error::{Error, Result};
use crate::model::{argmax_labels, Checkpoint, GCtxUNet};
use crate::nnblocks::{ParamStore, Session};
use crate::objectives::{combined_loss, evaluate_case, CaseReport, LabelMask, MetricReport};

const AUGMENT_STREAM: u64 = 0xA0;
const DROPOUT_STREAM: u64 = 0xD0;
const EVAL_BATCH: usize = 8;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub epoch: u64,
    pub step: u64,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    pub val_dsc: Option<f64>,
    pub lr: f64,
    pub wall_s: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dsc = self.val_dsc.map_or_else(|| "none".to_string(), |d| format!("{d:.6}"));
        write!(
            f,
            "epoch={} step={} loss={:.8} val_dsc={} lr={:e} wall_s={:.3}",
            self.epoch, self.step, self.loss, dsc, self.lr, self.wall_s
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    Patience,
    TargetDsc,
}

/// Notifications raised during [`Trainer::fit`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// An epoch finished and its record was appended to the log.
    Epoch(&'a LogRecord),
    /// The monitored DSC improved; the trainer holds the new best parameters.
    Improved { dsc: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<LogRecord>,
    /// Loss of every optimizer step taken during this call.
    pub step_losses: Vec<f64>,
    pub best_dsc: Option<f64>,
    pub stop: StopReason,
}

/// Owns the model and optimizer state for a training run. All randomness is
/// derived from `(seed, step)`, so a run resumed from a checkpoint continues
/// exactly as the uninterrupted run would have.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: GCtxUNet<f32>,
    pub opt: OptState<f32>,
    pub step: u64,
    pub best_dsc: Option<f64>,
    pub best_params: Option<ParamStore<f32>>,
    /// Evaluations since the last improvement.
    pub stale_evals: u64,
    epoch_loss_sum: f64,
    epoch_loss_count: u64,
}

fn meta_f64(ck: &Checkpoint, key: &str) -> Result<Option<f64>> {
    match ck.meta_value(key) {
        None | Some("none") => Ok(None),
        Some(v) => u64::from_str_radix(v, 16)
            .map(|b| Some(f64::from_bits(b)))
            .map_err(|_| Error::Integrity(format!("checkpoint meta '{key}' is malformed"))),
    }
}

fn meta_u64(ck: &Checkpoint, key: &str) -> Result<u64> {
    ck.meta_value(key)
        .unwrap_or("0")
        .parse()
        .map_err(|_| Error::Integrity(format!("checkpoint meta '{key}' is malformed")))
}

impl Trainer {
    pub fn new(model: GCtxUNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = OptState::new(&model.params);
        Ok(Self {
            cfg,
            model,
            opt,
            step: 0,
            best_dsc: None,
            best_params: None,
            stale_evals: 0,
            epoch_loss_sum: 0.0,
            epoch_loss_count: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The best
    /// parameters are not part of a resume checkpoint; the best score is.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = match &ck.opt {
            Some(o) => o.clone(),
            None => OptState::new(&ck.model.params),
        };
        Ok(Self {
            best_dsc: meta_f64(&ck, "best_dsc")?,
            stale_evals: meta_u64(&ck, "stale_evals")?,
            epoch_loss_sum: meta_f64(&ck, "epoch_loss_sum")?.unwrap_or(0.0),
            epoch_loss_count: meta_u64(&ck, "epoch_loss_count")?,
            step: ck.step,
            cfg,
            model: ck.model,
            opt,
            best_params: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let bits = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{:016x}", x.to_bits()));
        let meta = format!(
            "best_dsc={}\nstale_evals={}\nepoch_loss_sum={}\nepoch_loss_count={}\n",
            bits(self.best_dsc),
            self.stale_evals,
            bits(Some(self.epoch_loss_sum)),
            self.epoch_loss_count
        );
        Checkpoint {
            model: self.model.clone(),
            opt: Some(self.opt.clone()),
            step: self.step,
            rng: Rng::new(self.cfg.seed).fork(self.step).state(),
            meta,
        }
    }

    /// Model carrying the best parameters seen so far (current ones if none).
    pub fn best_model(&self) -> GCtxUNet<f32> {
        let mut m = self.model.clone();
        if let Some(p) = &self.best_params {
            m.params = p.clone();
        }
        m
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.batch_size) as u64
    }

    /// Batch planned for `step`, augmented when enabled.
    pub fn batch_for_step(&self, data: &Dataset, step: u64) -> Result<(gctx_numerics::Tensor<f32>, LabelMask)> {
        let spe = self.steps_per_epoch(data.len());
        let plan = epoch_plan(data.len(), self.cfg.batch_size, self.cfg.shuffle, self.cfg.seed, step / spe)?;
        let idx = &plan[(step % spe) as usize];
        if self.cfg.augment {
            let mut rng = Rng::new(self.cfg.seed).fork(AUGMENT_STREAM).fork(step);
            let aug: Vec<_> = idx.iter().map(|&i| augment(&data.samples[i], &mut rng)).collect();
            collate(&aug.iter().collect::<Vec<_>>())
        } else {
            collate(&idx.iter().map(|&i| &data.samples[i]).collect::<Vec<_>>())
        }
    }

    /// One optimizer step on the planned batch; returns its loss. On error
    /// the parameters and optimizer state are left untouched.
    pub fn train_step(&mut self, data: &Dataset) -> Result<f64> {
        let step = self.step;
        let (images, masks) = self.batch_for_step(data, step)?;
        let g = Graph::new();
        let rng = Rng::new(self.cfg.seed).fork(DROPOUT_STREAM).fork(step);
        let s = Session::new(&g, &self.model.params).training(rng);
        let diverged = |e: Error| match e {
            Error::Numerics(gctx_numerics::Error::NonFinite { .. }) => Error::Diverged { step, loss: f64::NAN },
            other => other,
        };
        let logits = self.model.forward(&s, &g.constant(images)).map_err(diverged)?;
        let loss = combined_loss(&logits, &masks, &self.cfg.loss_weights).map_err(diverged)?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = g.backward(&loss).map_err(|e| diverged(e.into()))?;
        let mut grads = s.collect_grads(&grads);
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        adamw_step(&mut self.model.params, &grads, &mut self.opt, &self.cfg.optimizer())
            .map_err(|_| Error::Diverged { step, loss: value })?;
        self.step += 1;
        Ok(value)
    }

    /// Trains until `max_epochs`, `max_steps`, patience exhaustion or the
    /// target DSC. Evaluation uses `val`, or the training set when absent.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_event: impl FnMut(&TrainEvent<'_>, &Trainer) -> Result<()>,
    ) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let monitor = val.unwrap_or(train);
        let spe = self.steps_per_epoch(train.len());
        let start = Instant::now();
        let mut out = TrainOutcome { log: Vec::new(), step_losses: Vec::new(), best_dsc: self.best_dsc, stop: StopReason::MaxEpochs };
        loop {
            let epoch = self.step / spe;
            if epoch >= self.cfg.max_epochs {
                out.stop = StopReason::MaxEpochs;
                break;
            }
            if self.cfg.max_steps.is_some_and(|m| self.step >= m) {
                out.stop = StopReason::MaxSteps;
                break;
            }
            let loss = self.train_step(train)?;
            out.step_losses.push(loss);
            self.epoch_loss_sum += loss;
            self.epoch_loss_count += 1;
            if self.step % spe != 0 {
                continue;
            }
            let mut rec = LogRecord {
                epoch,
                step: self.step,
                loss: self.epoch_loss_sum / self.epoch_loss_count as f64,
                val_dsc: None,
                lr: self.cfg.learning_rate,
                wall_s: if self.cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
            };
            self.epoch_loss_sum = 0.0;
            self.epoch_loss_count = 0;
            let mut stop = None;
            if (epoch + 1) % self.cfg.eval_every == 0 {
                let dsc = evaluate(&self.model, monitor, false)?.mean_dsc;
                rec.val_dsc = Some(dsc);
                if self.best_dsc.is_none_or(|b| dsc > b) {
                    self.best_dsc = Some(dsc);
                    self.best_params = Some(self.model.params.clone());
                    self.stale_evals = 0;
                    out.best_dsc = Some(dsc);
                    on_event(&TrainEvent::Improved { dsc }, self)?;
                } else {
                    self.stale_evals += 1;
                    if self.stale_evals >= self.cfg.patience {
                        stop = Some(StopReason::Patience);
                    }
                }
                if self.cfg.stop_at_dsc.is_some_and(|t| dsc >= t) {
                    stop = Some(StopReason::TargetDsc);
                }
            }
            on_event(&TrainEvent::Epoch(&rec), self)?;
            out.log.push(rec);
            if let Some(r) = stop {
                out.stop = r;
                break;
            }
        }
        Ok(out)
    }
}

/// Argmax predictions for every sample, in dataset order.
pub fn predict_masks(model: &GCtxUNet<f32>, data: &Dataset) -> Result<Vec<LabelMask>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(EVAL_BATCH) {
        let (images, _) = collate(&chunk.iter().collect::<Vec<_>>())?;
        let logits = model.predict_logits(&images)?;
        let labels = argmax_labels(&logits);
        let (h, w) = chunk[0].size();
        for (i, _) in chunk.iter().enumerate() {
            out.push(LabelMask::new(&[h, w], labels[i * h * w..(i + 1) * h * w].to_vec())?);
        }
    }
    Ok(out)
}

/// Argmax decoding and per-case metrics aggregated over the dataset.
/// Reads the parameters only.
pub fn evaluate(model: &GCtxUNet<f32>, data: &Dataset, with_hd95: bool) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    if data.num_classes != model.config.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes, model.config.num_classes
        )));
    }
    let preds = predict_masks(model, data)?;
    let cases = preds
        .iter()
        .zip(&data.samples)
        .map(|(p, s)| evaluate_case(p, &s.mask, data.num_classes, with_hd95.then_some(s.spacing)))
        .collect::<Result<Vec<CaseReport>>>()?;
    MetricReport::aggregate(&cases, with_hd95)
}
