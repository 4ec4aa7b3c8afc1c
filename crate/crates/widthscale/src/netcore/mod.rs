//! Finite-width one-hidden-layer classifier in hatted parameterization.
//!
//! The logit is `f(x) = σ Σ_r â_r φ(ŵ_r·x)` with unit-variance initial weights, so all
//! width dependence lives in the output scale `σ` and the hatted learning rates.

mod activation;
mod data;
mod model;
mod params;

pub use activation::{activation, activation_prime, activation_second, sigmoid, softplus, ActivationConfig};
pub use data::{DataPoint, Dataset};
pub use model::{
    forward, icmf_correction, icmf_forward, icmf_logits, icmf_sgd_step_in_place, logits, loss_grad, loss_value,
    mean_loss, sgd_step, sgd_step_in_place,
};
pub use params::{init_params, InitDist, InitSnapshot, Params};

pub(crate) use activation::activation_with_prime;
pub(crate) use model::{apply_update, grad_unchecked, raw_readout, Features};
