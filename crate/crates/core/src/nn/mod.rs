//! Minimal f64 multilayer perceptron with named output heads, manual
//! backpropagation, Adam, and finite-difference gradient checking.

mod adam;
mod checkpoint;
mod gaussian;
mod gradcheck;
mod mlp;

pub use adam::{clip_grad_norm, Adam};
pub use checkpoint::{Checkpoint, Tensor};
pub use gaussian::{
    diag_log_prob, gaussian_kl, gaussian_nll, gaussian_nll_grad, GaussianPrediction, LOG_STD_MAX,
    LOG_STD_MIN,
};
pub use gradcheck::{gradient_check, max_relative_error, numeric_gradient, FD_STEP};
pub use mlp::{train_step, Activation, HeadSpec, Mlp, NetworkSpec, Tape, LOG_STD_HEAD};
