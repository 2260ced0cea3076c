//! GPstruct: Bayesian structured prediction on linear chains.
//!
//! Clique potentials of a chain-structured conditional model are latent
//! variables with a Gaussian process prior. Training draws posterior samples
//! of the latents by elliptical slice sampling, optionally interleaved with
//! prior-whitened Metropolis-Hastings moves on the kernel hyperparameters.
//! Prediction conditions the test-position latents on each posterior sample
//! and averages the resulting chain marginals (Bayesian model averaging).
//!
//! The crate is organised around the pipeline stages:
//!
//! - [`corpus`]: labeled token sequences, parsing, splits, dataset statistics
//! - [`kernels`]: joint input-output kernel and the block-structured Gram matrix
//! - [`chain`]: exact inference on linear chains (forward-backward, Viterbi)
//! - [`sampler`]: ESS training loop, hyperparameter MH, chain management
//! - [`predict`]: predictive conditionals, model averaging, decoding, metrics
//! - [`cli`]: command front end, config files, synthetic data generation

pub mod chain;
pub mod cli;
pub mod corpus;
mod error;
pub mod kernels;
mod math;
pub mod predict;
pub mod sampler;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
