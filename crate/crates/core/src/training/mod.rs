//! Objective, training loop and fine-tuning.

pub mod config;
pub mod losses;
pub mod trainer;

pub use config::{LossWeights, TrainConfig, TERMS};
pub use trainer::{finetune, train, LossReport, Trainer};
