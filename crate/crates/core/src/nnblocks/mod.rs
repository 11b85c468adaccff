//! GC-ViT building blocks. Every block owns [`ParamId`]s into a
//! [`ParamStore`] and runs against a [`Session`], so one block structure
//! serves both 32-bit training and 64-bit gradient checks.

mod attention;
mod conv_blocks;
mod layers;
mod params;

pub use attention::{
    gtg_reductions, window_merge, window_merge_tokens, window_partition, window_partition_tokens, AttentionKind,
    GcVitBlock, GcVitStage, GlobalTokenGenerator, Mlp, RelPosBias, StageSpec, WindowAttention,
};
pub use conv_blocks::{Downsample, FusedMbConv, PatchEmbed, SeBlock, Upsample, UpsampleKind};
pub use layers::{Conv2d, ConvTranspose2d, LayerNorm, Linear};
pub use params::{gradcheck_with_params, Init, ParamId, ParamStore, Session};
