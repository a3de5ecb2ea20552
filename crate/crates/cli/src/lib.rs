//! Experiment pipeline: presets, dataset generation, training, inversion and
//! benchmarks behind the `subdiff` binary.

pub mod commands;
pub mod datagen;
pub mod error;
pub mod preset;
pub mod problems;
