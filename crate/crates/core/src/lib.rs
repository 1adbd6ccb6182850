//! Variational learning of unobserved confounders for counterfactual inference.
//!
//! `no_std` + `alloc` numerical core:
//!
//! - [`nn`]: dense networks with reverse-mode gradients and Adam
//! - [`synth`]: synthetic observational data with hidden confounders
//! - [`vluci`]: the prediction / generator / reconstructor model and its training
//! - [`estimators`]: S-learner, T-learner and IPW baselines, with or without a learned confounder
//! - [`metrics`]: PEHE, ATE error and multi-run aggregation
//!
//! File formats, the experiment harness and the CLI live in the `vluci-lab` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod estimators;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod vluci;

pub use error::{Error, Result};
