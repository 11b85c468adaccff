mod checkpoint;
mod config;
mod net;

pub use checkpoint::{checksum64, Checkpoint, MAGIC, VERSION};
pub(crate) use config::parse_num;
pub use config::{parse_kv, KvEntry, ModelConfig, MODEL_KEYS};
pub use net::{argmax_labels, DecoderStage, GCtxUNet, Layout, SegHead};
