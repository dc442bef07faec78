//! Benchmark and verification harness for the `bitserial` kernels.

pub mod baseline;
pub mod error;
pub mod layers;
pub mod report;
pub mod runner;
pub mod verify;

pub use error::{BenchError, Result};
