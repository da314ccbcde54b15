//! Dense-network substrate: matrices, layers, dropout, backprop and Adam.

mod adam;
mod layer;
mod matrix;
mod mlp;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use layer::{dropout_mask, Activation, DenseLayer, DropoutSpec};
pub use matrix::Matrix;
pub use mlp::{ForwardCache, Mlp, MlpGradients};
pub use rng::RngStream;
