//! Concrete targets and proposals.
//!
//! [`ppca`] carries the probabilistic PCA model together with its
//! closed-form oracles (exact posterior, exact marginal gradient, analytic
//! maximum-likelihood fit); [`linear_gaussian`] the amortized factorized
//! Gaussian proposal; [`discrete_toy`] a two-atom target small enough for
//! exact transition-law enumeration; [`bimodal`] a 1-D mixture target for
//! qualitative kernel traces.

pub mod bimodal;
pub mod discrete_toy;
pub mod linear_gaussian;
pub mod ppca;

pub use bimodal::{mean_repeat_run_length, toy_trace, BimodalToy1D, ToyKernel, TraceRow};
pub use discrete_toy::{enumerate_transition_law, DiscreteToyTarget, EnumKernel};
pub use linear_gaussian::LinearGaussianProposal;
pub use ppca::PpcaModel;
