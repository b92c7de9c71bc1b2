//! LPCANet: a dual-stream RGB-D segmentation network for rail surface
//! defects, together with its training loop, evaluation metrics and file
//! formats.

pub mod data_io;
mod error;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
