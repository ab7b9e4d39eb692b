//! Dense numeric kit: matrices, MLPs, losses, Adam and gradient checking.

mod adam;
mod gradcheck;
mod loss;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::{
    grad_check, grad_check_against, grad_check_matrix, relative_error, MIN_SAMPLED_COORDS, RELATIVE_FLOOR,
};
pub use loss::{loss_ce, loss_mse, softmax, softmax_backward};
pub use matrix::{argmax, dot, Matrix};
pub use mlp::{weight_blob_len, Activation, ForwardCache, LayerSpec, Mlp, MlpGrads, Role, LEAKY_SLOPE};

pub(crate) use mlp::ByteReader;
