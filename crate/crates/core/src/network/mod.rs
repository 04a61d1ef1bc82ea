//! Layered classifiers: evaluation, recorded activations, rule-driven backward passes
//! and the manifest + weight-blob file format.

mod backward;
mod io;
mod layer;
mod model;

pub use backward::{
    backward_input, backward_to_layer_output, score_seed, BackwardRule, BackwardRuleSet, Signal, LRP_EPSILON,
};
pub(crate) use backward::propagate;
pub use io::{load_model, save_model, MANIFEST_VERSION};
pub use layer::{softmax, Layer, LayerKind};
pub use model::{ForwardTrace, LayerRecord, Model, ScoreMode};
