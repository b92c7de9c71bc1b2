//! Netpbm images, dataset manifests, the synthetic generator and checkpoints.

pub mod checkpoint;
mod image;
mod manifest;
pub mod netpbm;
mod sample;
pub mod synth;

pub use image::{to_byte, Image};
pub use sample::{binarize_mask, make_batch, Batch, FloatSample, Sample};
pub use synth::{DefectKind, SynthSpec};
pub use manifest::{load_manifest, parse_manifest, write_dataset, Dataset, Record};
