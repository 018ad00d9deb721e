//! Importance-sampling based MCMC kernels and finite-time unbiased estimators.
//!
//! The crate implements the ISIR kernel (iterated sampling importance
//! resampling), its dependent-proposal extension DISIR driven by an
//! autoregressive kernel in reparameterization-noise space, maximal couplings
//! of the resulting chains, and the lagged coupling estimator that turns a
//! pair of chains into an unbiased estimate of a posterior expectation in
//! finite (random) time. Specialized to `h = ∇_θ log p_θ(x, z)`, this yields
//! unbiased estimates of the log-likelihood gradient of a latent variable
//! model via Fisher's identity.
//!
//! Concrete targets live in [`models`]: probabilistic PCA with closed-form
//! oracles (exact posterior, exact marginal gradient, analytic ML fit), a
//! linear-Gaussian amortized proposal, a two-atom discrete target for exact
//! enumeration, and a 1-D bimodal toy for qualitative kernel traces.
//!
//! The crate is `no_std`-compatible (requires `alloc`); disable the default
//! `std` feature for embedded-style builds. All operations are pure given an
//! explicit [`rng::RngStream`], so chains and estimator replicates can run on
//! any number of threads with reproducible results.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod coupling;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod models;
pub mod params;
pub mod rng;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use kernels::{AugmentedState, BetaController, KernelDiagnostics};
pub use model::{GradZModel, Model, PathwiseProposal, Proposal};
pub use rng::RngStream;
pub use weights::WeightVector;
