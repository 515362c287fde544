//! File formats, configuration and synthetic workloads.

pub mod config;
pub mod synth;
pub mod tensor;

pub use config::ExperimentConfig;
pub use tensor::{Tensor, TensorData};
