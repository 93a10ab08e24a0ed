//! Experiment harness: configuration, the five CLI commands and the property
//! suites behind `verify`.

pub mod cli;
pub mod config;
pub mod runner;
pub mod verify;

pub use config::RunConfig;
