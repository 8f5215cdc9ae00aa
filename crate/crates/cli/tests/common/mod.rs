#![allow(dead_code)]

use std::path::Path;

use renet_cli::dataset::{generate_dataset, GenOptions};
use renet_cli::ModelConfig;

/// One 20-frame sequence per split at 48x48.
pub fn tiny_dataset(dir: &Path, seed: u64) {
    let opts = GenOptions {
        train_sequences: 1,
        val_sequences: 1,
        night_sequences: 1,
        frames_per_sequence: 20,
        size: 48,
        seed,
    };
    generate_dataset(&opts, dir).unwrap();
}

/// Desk architecture at 48x48 input with a short schedule.
pub fn tiny_config(epochs: usize) -> ModelConfig {
    ModelConfig { input_size: 48, epochs, ..ModelConfig::default() }
}

pub fn quiet(_: &str) {}
