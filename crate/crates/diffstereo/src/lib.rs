//! Files, checkpoints and the command line for `diffstereo-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod image_io;
pub mod manifest;
pub mod training;

pub use diffstereo_core as core;
pub use error::{CliError, Result};
