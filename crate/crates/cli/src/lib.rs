//! Command-line driver for the `radx` extraction pipeline.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{run, Outcome};
