//! Loss, optimizer, augmentation and the training loop.

pub mod augment;
mod loss;
mod optim;
mod trainer;

pub use loss::{bce_loss, pixel_bce, CLAMP};
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use augment::{augment, AugmentDraw, AugmentSpec};
pub use trainer::{evaluate, predict, train, LogRow, TrainOutcome, TrainPlan, LOG_HEADER};
