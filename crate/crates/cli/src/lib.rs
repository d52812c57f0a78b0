//! Command implementations behind the `htsid` binary.

pub mod commands;
pub mod config;
mod fsutil;

pub use config::{Paths, PipelineConfig};
pub use fsutil::write_atomic;
