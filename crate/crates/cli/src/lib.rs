//! Dataset generation, training, evaluation, inference and ablations for the RENet detector.

pub mod ablate;
pub mod augment;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod train;

pub use config::{AugmentConfig, ModelConfig};
pub use error::{CliError, Result};
pub use train::{train, RunManifest, TrainOptions};
