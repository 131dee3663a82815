//! Combining predictions of several imperfect models into calibrated
//! probabilistic predictions.
//!
//! Two families of combination are provided:
//!
//! * Bayesian model averaging ([`bma`]): per-model evidences computed in closed
//!   form, by prior Monte Carlo, or by Laplace's method, turned into posterior
//!   model probabilities.
//! * Bayesian model mixing ([`mixtures`]): the observation is modeled as a
//!   weighted sum of model outputs, with global weights (uniform-prior linear
//!   or hierarchical Dirichlet) or location-dependent Dirichlet weights whose
//!   log-concentrations follow a generalized linear model or a latent Gaussian
//!   process.
//!
//! Mixture posteriors are explored with NUTS or random-walk Metropolis
//! ([`samplers`]); [`predict`] propagates draws to new locations and scores
//! them.

pub mod bma;
pub mod dataset;
pub mod error;
pub mod mixtures;
pub mod optim;
pub mod par;
pub mod predict;
pub mod prob;
pub mod quadrature;
pub mod samplers;
pub mod synthetic;

pub use error::{Error, Result};
pub use par::Execution;

/// Derive a reproducible per-work-item RNG from a base seed.
pub fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
