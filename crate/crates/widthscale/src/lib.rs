//! Width-scaling laboratory for one-hidden-layer classifiers.
//!
//! * [`scaling`]: exponents, anchors, stability band and the 13-region taxonomy.
//! * [`netcore`]: the finite-width network, its loss and SGD updates, and the IC-MF variant.
//! * [`kernels`]: tangent kernels, their normalized forms and first-order increments.
//! * [`limits`]: Monte-Carlo limit kernels and simulators of the infinite-width dynamics.
//! * [`harness`]: datasets, training runs, width sweeps, exponent fits, KL metrics and persistence.

pub mod error;
pub mod harness;
pub mod kernels;
pub mod limits;
pub mod netcore;
pub mod scaling;
pub mod seed;

pub use error::{Error, Result};
