//! Federated-learning property-leakage laboratory.
//!
//! Trains small networks under simulated FedSGD/FedAvg, exposes per-layer
//! gradients, and scores each layer's property-leakage risk with two
//! metrics (empirical V-information and Jacobian p-norm sensitivity) that
//! are validated against a property-inference attack scored by AUC.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod datagen;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod report;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
