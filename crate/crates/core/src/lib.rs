//! GCtx-UNet: GC-ViT blocks in a U-shaped segmentation network, with its
//! losses, metrics, data pipeline and AdamW trainer.

pub mod checks;
pub mod data;
mod error;
pub mod model;
pub mod nnblocks;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
