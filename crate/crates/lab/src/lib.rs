//! Files, experiment protocol and command-line driver around the `vluci` core.
//!
//! The core crate does the numerics without touching the filesystem; this
//! crate adds the dataset and checkpoint formats, the repeated 80/20
//! experiment with its aggregate table, and the paired prior-collapse check.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod protocol;
pub mod report;
pub mod spec;

pub use error::{LabError, Result};
pub use spec::ExperimentSpec;
