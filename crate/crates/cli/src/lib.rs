//! Command-line driver and HTTP scoring service for the screening pipeline.

pub mod commands;
pub mod config;
pub mod scoring;
pub mod service;

pub use commands::{run, Cli};
