//! Laboratory for the cold posterior effect in small Bayesian neural networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: MLP forward pass, reverse-mode log-likelihood gradients and a
//!   finite-difference oracle.
//! - [`energy`]: Gaussian prior, likelihood variants (categorical, label counts,
//!   label smoothing) and the minibatch potential-energy estimator.
//! - [`sampler`]: SGLD / SG-HMC with cyclical step sizes and tempering, plus
//!   Adam for training labeller networks.
//! - [`data`]: toy Gaussians, IDX/CSV loaders, subsampling, gradient-budget
//!   schedules and image augmentation.
//! - [`curation`]: simulated consensus labelling.
//! - [`eval`]: posterior predictive, cross-entropy, accuracy, ECE, CPER and
//!   decision-boundary grids.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curation;
pub mod data;
pub mod energy;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{GradVector, MlpSpec, ParamVector};
