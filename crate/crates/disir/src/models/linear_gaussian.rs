//! Amortized fully-factorized Gaussian proposal with linear dependence on x.
//!
//! `q(z | x) = N(z; W x + b, diag(exp(log_s)^2))`, reparameterized as
//! `g(xi, x) = W x + b + exp(log_s) .* xi`. `phi` is flat with slices `w`
//! (`dz x dx`, row-major), `b` and `log_s` (length `dz` each).

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::linalg::{chol_solve, cholesky, mat_vec};
use crate::model::{Model, PathwiseProposal, Proposal};
use crate::models::ppca::PpcaModel;
use crate::params::ParamLayout;
use crate::rng::RngStream;
use crate::stats::norm_logpdf;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianProposal {
    dz: usize,
    dx: usize,
    phi: Vec<f64>,
    layout: ParamLayout,
}

impl LinearGaussianProposal {
    /// Fresh proposal with `W = 0`, `b = 0`, `log_s = 0`: a standard normal
    /// regardless of `x`.
    pub fn new(dz: usize, dx: usize) -> Self {
        assert!(dz >= 1);
        let layout = ParamLayout::new([("w", dz * dx), ("b", dz), ("log_s", dz)]);
        LinearGaussianProposal { dz, dx, phi: vec![0.0; layout.len()], layout }
    }

    /// Proposal matching the exact PPCA posterior: the mean map is exact for
    /// any loadings; the factorized standard deviations equal the posterior
    /// marginal ones, so the match is exact precisely when the posterior
    /// covariance is diagonal (orthogonal loading rows).
    pub fn matched_to_posterior(model: &PpcaModel) -> Result<Self> {
        let dz = model.dz();
        let dx = model.dx();
        let theta = model.theta().to_vec();
        let layout = model.theta_layout().clone();
        let theta0 = layout.slice(&theta, "theta0");
        let theta1 = layout.slice(&theta, "theta1");

        // posterior precision M = I + theta1 theta1^T / sigma2
        let mut m = vec![0.0; dz * dz];
        for i in 0..dz {
            for j in 0..dz {
                let mut acc = 0.0;
                for a in 0..dx {
                    acc += theta1[i * dx + a] * theta1[j * dx + a];
                }
                m[i * dz + j] = acc / PpcaModel::SIGMA2;
            }
            m[i * dz + i] += 1.0;
        }
        let lm = cholesky(&m, dz)?;

        // W = M^{-1} theta1 / sigma2, column by column
        let mut proposal = LinearGaussianProposal::new(dz, dx);
        let mut w = vec![0.0; dz * dx];
        let mut col = vec![0.0; dz];
        for j in 0..dx {
            for i in 0..dz {
                col[i] = theta1[i * dx + j] / PpcaModel::SIGMA2;
            }
            let solved = chol_solve(&lm, dz, &col);
            for i in 0..dz {
                w[i * dx + j] = solved[i];
            }
        }
        let b: Vec<f64> = mat_vec(&w, dz, dx, theta0).iter().map(|v| -v).collect();

        let cov = crate::linalg::chol_inverse(&lm, dz);
        let log_s: Vec<f64> = (0..dz).map(|i| 0.5 * cov[i * dz + i].ln()).collect();

        proposal.phi[..dz * dx].copy_from_slice(&w);
        proposal.phi[dz * dx..dz * dx + dz].copy_from_slice(&b);
        proposal.phi[dz * dx + dz..].copy_from_slice(&log_s);
        Ok(proposal)
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    fn w(&self) -> &[f64] {
        &self.phi[..self.dz * self.dx]
    }

    fn b(&self) -> &[f64] {
        &self.phi[self.dz * self.dx..self.dz * self.dx + self.dz]
    }

    fn log_s(&self) -> &[f64] {
        &self.phi[self.dz * self.dx + self.dz..]
    }

    /// Proposal mean `W x + b`.
    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dx);
        let mut mu = mat_vec(self.w(), self.dz, self.dx, x);
        for (m, b) in mu.iter_mut().zip(self.b()) {
            *m += b;
        }
        mu
    }

    /// Inverse of the reparameterization map: `xi = (z - mean(x)) / s`.
    pub fn inverse_reparam(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let mu = self.mean(x);
        let mut xi = vec![0.0; self.dz];
        for i in 0..self.dz {
            xi[i] = (z[i] - mu[i]) / self.log_s()[i].exp();
        }
        xi
    }
}

impl Proposal for LinearGaussianProposal {
    fn latent_dim(&self) -> usize {
        self.dz
    }

    fn phi(&self) -> &[f64] {
        &self.phi
    }

    fn set_phi(&mut self, phi: &[f64]) {
        assert_eq!(phi.len(), self.phi.len());
        self.phi.copy_from_slice(phi);
    }

    fn phi_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dz);
        let mu = self.mean(x);
        let mut lp = 0.0;
        for i in 0..self.dz {
            lp += norm_logpdf(z[i], mu[i], self.log_s()[i].exp());
        }
        lp
    }

    fn reparam(&self, xi: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(xi.len(), self.dz);
        let mut z = self.mean(x);
        for i in 0..self.dz {
            z[i] += self.log_s()[i].exp() * xi[i];
        }
        z
    }

    fn sample_direct(&self, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut z = self.mean(x);
        for i in 0..self.dz {
            z[i] += self.log_s()[i].exp() * rng.standard_normal();
        }
        z
    }
}

impl PathwiseProposal for LinearGaussianProposal {
    fn grad_z_log_density(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mu = self.mean(x);
        let mut g = vec![0.0; self.dz];
        for i in 0..self.dz {
            let s = self.log_s()[i].exp();
            g[i] = -(z[i] - mu[i]) / (s * s);
        }
        g
    }

    fn grad_phi_log_density(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mu = self.mean(x);
        let mut g = vec![0.0; self.phi.len()];
        for i in 0..self.dz {
            let s = self.log_s()[i].exp();
            let pull = (z[i] - mu[i]) / (s * s);
            for j in 0..self.dx {
                g[i * self.dx + j] = pull * x[j];
            }
            g[self.dz * self.dx + i] = pull;
            g[self.dz * self.dx + self.dz + i] = -1.0 + pull * (z[i] - mu[i]);
        }
        g
    }

    fn reparam_vjp(&self, xi: &[f64], x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cotangent.len(), self.dz);
        let mut g = vec![0.0; self.phi.len()];
        for i in 0..self.dz {
            let v = cotangent[i];
            for j in 0..self.dx {
                g[i * self.dx + j] = v * x[j];
            }
            g[self.dz * self.dx + i] = v;
            g[self.dz * self.dx + self.dz + i] = v * self.log_s()[i].exp() * xi[i];
        }
        g
    }
}
