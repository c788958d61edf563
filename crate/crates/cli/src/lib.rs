//! Command-line front end for the kgforge augmentation pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

pub use commands::{run, Cli};
