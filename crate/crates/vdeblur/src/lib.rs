//! File formats, checkpoints and the `vdeblur` command line around
//! [`vdeblur_core`].

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod frames;
pub mod manifest;
pub mod report;

pub use error::{CliError, CliResult};
