//! Network architecture and its cost accounting.

pub mod accounting;
mod backbone;
mod blocks;
mod cam;
mod check;
pub mod config;
mod decoder;
mod lpm;
mod net;
mod sfe;

pub use backbone::{Backbone, InvertedResidual};
pub use blocks::ConvBn;
pub use cam::{from_tokens, to_tokens, Cam, StageFusion};
pub use config::{parse_stage_mask, Ablation, BackboneLayout, BlockGroup, ModelConfig, Preset, STAGES};
pub use decoder::{Decoder, Head};
pub use lpm::{Lpm, LpmStage};
pub use net::{ForwardTrace, LpcaNet, StageFeatures};
pub use sfe::Sfe;
pub use check::end_to_end_gradcheck;
