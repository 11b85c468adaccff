//! Differentiable operations, implemented as methods on [`crate::Var`].

mod elementwise;
mod linalg;
mod nn;
pub(crate) mod reduce;
mod shape;

pub use linalg::{conv_out_extent, conv_transpose_out_extent};
pub use nn::resize_bilinear;
