mod adamw;
mod config;
mod train;

pub use adamw::{adamw_step, adamw_update, clip_grad_norm, AdamW, OptState};
pub use config::{RunConfig, TrainConfig, TRAIN_KEYS};
pub use train::{evaluate, predict_masks, LogRecord, StopReason, TrainEvent, TrainOutcome, Trainer};
