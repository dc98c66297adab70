//! A small deterministic neural-network engine with explicit forward and
//! backward passes. The backward pass accepts any seed at the output
//! pre-activation, which is what the leakage metrics build on.

mod gradient;
mod layer;
mod model;
mod ops;
pub mod snapshot;
mod zoo;

pub use gradient::{GradMeta, GradientRecord, LayerGrad, SeedKind};
pub use layer::{LayerSpec, ModelSpec};
pub use model::{build_model, sgd_step, LayerParams, Model};
pub use ops::{
    backward, backward_with_kind, forward, layer_gradient, loss_gradient, loss_softmax_ce,
    one_hot_to_indices, ForwardTrace,
};
pub use zoo::{model_zoo, PRESETS};
