//! Dyadic-block sparse SRAM-PIM toolchain: CSD encoding, block pruning and
//! fixed-threshold approximation, a compiler onto a modeled PIM array, a
//! cycle-level simulator with a dense baseline, and evaluation metrics.

pub mod arch;
pub mod compiler;
pub mod csd;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod sparsify;
pub mod tensor;

pub use arch::ArchConfig;
pub use error::{Error, Result};
