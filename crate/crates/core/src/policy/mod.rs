//! Policy evaluation: dense networks, weight files and message passing.

pub mod gnn;
pub mod mlp;
pub mod reference;
pub mod weights;

pub use gnn::{
    aggregate, build_observation, encode, evaluate_centralized, evaluate_local,
    message_transform, propagate_centralized, Action, Message, MessageLayer, Observation,
};
pub use mlp::{mlp_forward, Activation, DenseLayer, MlpParams};
pub use reference::{reference_weights, ReferenceGains};
pub use weights::{load_weights, random_weights, save_weights, PolicyDims, PolicyWeights};

/// Observation width: position, relative goal, predicted position.
pub const OBS_DIM: usize = 6;
