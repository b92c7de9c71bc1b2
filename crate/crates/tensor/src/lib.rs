//! Dense NCHW tensors with tape-based reverse-mode differentiation, the
//! layers an RGB-D segmentation network needs, and a finite-difference
//! gradient checker.

mod element;
mod error;
pub mod checks;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
mod module;
mod ops;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use module::{join, Module, ModuleExt};
pub use ops::attention_probs;
pub use tape::{BackwardCtx, BackwardFn, Gradients, Param, ParamId, Tape, Var};
pub use tensor::{Shape, Tensor};
