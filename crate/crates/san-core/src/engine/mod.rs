//! Minimal deterministic dense-network engine: forward pass, reverse-mode
//! gradients, He-normal initialization, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod matrix;
mod net;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, FD_NOISE_FLOOR};
pub use matrix::Matrix;
pub use net::{sample_noise, Activation, DenseLayer, DenseNet, ForwardTrace, LayerGrads, NetGrads};
