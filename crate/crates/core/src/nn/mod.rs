//! Minimal dense numerical core: matrices, multilayer perceptrons with
//! reverse-mode gradients, and the Adam optimizer.

mod adam;
mod codec;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{param_count, Activation, Mlp, MlpRecord};
