//! Dense tensors, a tape-based reverse-mode differentiator, and the
//! finite-difference harness used to verify it.
//!
//! Every differentiable op is a method on [`Var`]. Ops record themselves on the
//! owning [`Graph`] only when an input is tracked; results are checked for
//! non-finite values and fail with [`Error::NonFinite`].

mod element;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod ops;
mod rng;
mod tensor;

pub use element::{DType, Element};
pub use error::{Error, Result};
pub use gradcheck::{check_primitives, gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Gradients, Graph, Var};
pub use rng::{Rng, RngState};
pub use tensor::{numel, strides, Tensor};
