//! Variational autoencoder with an implicit aggregated-posterior prior.
//!
//! The intractable KL term against the aggregated posterior is rewritten as
//! the closed-form KL to a standard Gaussian minus the expectation of a
//! low-dimensional density-ratio logit, which a small classifier network
//! estimates from samples. Standard-Gaussian and VampPrior baselines are
//! included so the three priors can be compared end to end.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod graph;
pub mod klterm;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
