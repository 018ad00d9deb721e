//! Target model and proposal abstractions.
//!
//! A [`Model`] owns its parameter vector `theta` and evaluates the joint
//! density `p_theta(x, z)` and its analytic theta-gradient. A [`Proposal`]
//! owns `phi` and provides the density `q_phi(z | x)` together with the
//! reparameterization map `z = g_phi(xi, x)` that pushes a standard normal
//! noise vector `xi` forward to the proposal distribution.
//!
//! The pathwise traits add the hooks needed by proposal fitting (the
//! reparameterized gradient of the importance-weighted bound): z-gradients
//! of both log densities, the partial phi-gradient of `log q` at fixed `z`,
//! and the vector-Jacobian product through `g_phi`.

use alloc::vec::Vec;

use crate::params::ParamLayout;
use crate::rng::RngStream;

/// A latent variable model `p_theta(x, z)` with analytic gradients.
///
/// No automatic differentiation is used anywhere in this crate; models
/// supply closed-form gradients.
pub trait Model {
    fn latent_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// Flat parameter vector; slices addressed via [`Model::theta_layout`].
    fn theta(&self) -> &[f64];
    fn set_theta(&mut self, theta: &[f64]);
    fn theta_layout(&self) -> &ParamLayout;

    /// `log p_theta(x, z)`.
    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64;

    /// `d/dtheta log p_theta(x, z)`, same length as `theta`.
    fn grad_theta_log_joint(&self, x: &[f64], z: &[f64]) -> Vec<f64>;
}

/// Models that additionally expose `d/dz log p_theta(x, z)`.
///
/// Required only by proposal fitting, where the pathwise chain rule passes
/// through the latent coordinates.
pub trait GradZModel: Model {
    fn grad_z_log_joint(&self, x: &[f64], z: &[f64]) -> Vec<f64>;
}

/// A reparameterizable proposal distribution `q_phi(z | x)`.
pub trait Proposal {
    fn latent_dim(&self) -> usize;

    fn phi(&self) -> &[f64];
    fn set_phi(&mut self, phi: &[f64]);
    fn phi_layout(&self) -> &ParamLayout;

    /// `log q_phi(z | x)`.
    fn log_density(&self, x: &[f64], z: &[f64]) -> f64;

    /// The reparameterization map `g_phi(xi, x)`; pushes `xi ~ N(0, I)`
    /// forward to `z ~ q_phi(z | x)`.
    fn reparam(&self, xi: &[f64], x: &[f64]) -> Vec<f64>;

    /// Draws `z ~ q_phi(z | x)` directly, without going through noise
    /// space. Used by the z-space ISIR kernel.
    fn sample_direct(&self, x: &[f64], rng: &mut RngStream) -> Vec<f64>;
}

/// Proposals that expose the gradient hooks used by proposal fitting.
pub trait PathwiseProposal: Proposal {
    /// `d/dz log q_phi(z | x)`.
    fn grad_z_log_density(&self, x: &[f64], z: &[f64]) -> Vec<f64>;

    /// `d/dphi log q_phi(z | x)` holding `z` fixed.
    fn grad_phi_log_density(&self, x: &[f64], z: &[f64]) -> Vec<f64>;

    /// `cotangent^T (d g_phi(xi, x) / d phi)`, length of `phi`.
    fn reparam_vjp(&self, xi: &[f64], x: &[f64], cotangent: &[f64]) -> Vec<f64>;
}
