//! File formats, configuration and the command pipeline around
//! [`regiongnn_core`].
//!
//! Inputs arrive either as raw CSV tables described by an ingestion manifest
//! or as a graph snapshot written by an earlier command. Every command
//! writes into a run directory holding `resolved-config.json`, `run.log` and
//! its artifacts.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
mod files;
pub mod report;
pub mod run;
pub mod snapshot;

pub use error::{Error, Result};
pub use regiongnn_core as core;
