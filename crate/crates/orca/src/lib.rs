//! File formats, run configuration and subcommands for the `orca` binary.

pub mod buoy_text;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid_file;
pub mod heatmap;
pub mod weights;

pub use error::{Error, Result};
