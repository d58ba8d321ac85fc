//! Benchmark harness: data ingestion, task construction, experiment runs,
//! bound verification and spectrum export behind the `bench` binary.

pub mod config;
pub mod csvio;
pub mod error;
pub mod idx;
pub mod runner;
pub mod selftest;
pub mod tasks;

pub use error::{BenchError, Result};
