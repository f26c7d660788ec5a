//! Minimal dense network substrate used by the critics.

mod adam;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState, Parameters};
pub use matrix::Matrix;
pub use mlp::{
    init_mlp, init_mlp_with_rng, mlp_backward, mlp_forward, Dense, MlpCache, MlpGrads, MlpParams,
};
pub(crate) use mlp::{backward_layers, forward_layers};
