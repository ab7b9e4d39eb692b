//! Configuration and the `azsl` subcommands.

mod commands;
mod config;

pub use commands::*;
pub use config::{parse_entries, parse_synthetic_spec, ChannelMode, DatasetSource, Entry, ExperimentConfig, RunSeeds};
