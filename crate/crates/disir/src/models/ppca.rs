//! Probabilistic PCA with closed-form oracles.
//!
//! The model is `p(x, z) = N(z; 0, I) N(x; theta0 + theta1^T z, 0.1 I)` with
//! the observation noise variance pinned at `0.1`. Because everything is
//! linear-Gaussian, the marginal likelihood, its theta-gradient, the exact
//! posterior over `z`, and the maximum-likelihood parameters are all
//! available in closed form; they serve as oracles for the Monte Carlo
//! estimators built elsewhere in the crate.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::kernels::{propagate_slots, AugmentedState};
use crate::linalg::{
    chol_inverse, chol_logdet, chol_solve, cholesky, dot, mat_tvec, mat_vec, sym_eigen,
};
use crate::model::{GradZModel, Model};
use crate::models::linear_gaussian::LinearGaussianProposal;
use crate::params::ParamLayout;
use crate::rng::RngStream;
use crate::stats::norm_logpdf;

/// `p(x,z) = N(z; 0, I) N(x; theta0 + theta1^T z, sigma2 I)`.
///
/// `theta` is flat with named slices `theta0` (length `dx`) and `theta1`
/// (`dz x dx`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PpcaModel {
    dz: usize,
    dx: usize,
    theta: Vec<f64>,
    layout: ParamLayout,
}

/// Exact posterior `p(z | x)`, a Gaussian.
#[derive(Debug, Clone)]
pub struct PpcaPosterior {
    pub mean: Vec<f64>,
    /// Row-major `dz x dz` covariance.
    pub cov: Vec<f64>,
    chol_cov: Vec<f64>,
}

impl PpcaPosterior {
    /// One exact posterior draw.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let dz = self.mean.len();
        let mut xi = vec![0.0; dz];
        rng.fill_standard_normal(&mut xi);
        let mut z = self.mean.clone();
        for i in 0..dz {
            for j in 0..=i {
                z[i] += self.chol_cov[i * dz + j] * xi[j];
            }
        }
        z
    }
}

/// Analytic maximum-likelihood fit (sigma2 held fixed).
#[derive(Debug, Clone)]
pub struct PpcaMlFit {
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
}

impl PpcaModel {
    /// Observation noise variance, fixed by construction.
    pub const SIGMA2: f64 = 0.1;

    pub fn new(dz: usize, dx: usize, theta: Vec<f64>) -> Self {
        assert!(dz >= 1 && dx >= 1);
        let layout = ParamLayout::new([("theta0", dx), ("theta1", dz * dx)]);
        assert_eq!(theta.len(), layout.len());
        PpcaModel { dz, dx, theta, layout }
    }

    /// Random benchmark instance: `theta0 = 0`, `theta1` entries i.i.d.
    /// `N(0, 1/dz)`.
    pub fn random_instance(dz: usize, dx: usize, rng: &mut RngStream) -> Self {
        let mut theta = vec![0.0; dx + dz * dx];
        let scale = (1.0 / dz as f64).sqrt();
        for v in theta[dx..].iter_mut() {
            *v = scale * rng.standard_normal();
        }
        PpcaModel::new(dz, dx, theta)
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    fn theta0(&self) -> &[f64] {
        &self.theta[..self.dx]
    }

    fn theta1(&self) -> &[f64] {
        &self.theta[self.dx..]
    }

    /// Residual `x - theta0 - theta1^T z`.
    fn residual(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mean = mat_tvec(self.theta1(), self.dz, self.dx, z);
        let mut r = vec![0.0; self.dx];
        for j in 0..self.dx {
            r[j] = x[j] - self.theta0()[j] - mean[j];
        }
        r
    }

    /// Marginal covariance `C = theta1^T theta1 + sigma2 I` (row-major
    /// `dx x dx`).
    fn marginal_cov(&self) -> Vec<f64> {
        let t1 = self.theta1();
        let mut c = vec![0.0; self.dx * self.dx];
        for a in 0..self.dx {
            for b in 0..self.dx {
                let mut acc = 0.0;
                for i in 0..self.dz {
                    acc += t1[i * self.dx + a] * t1[i * self.dx + b];
                }
                c[a * self.dx + b] = acc;
            }
            c[a * self.dx + a] += Self::SIGMA2;
        }
        c
    }

    /// Closed-form `log p(x) = log N(x; theta0, theta1^T theta1 + sigma2 I)`.
    pub fn marginal_log_lik(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let c = self.marginal_cov();
        let l = cholesky(&c, self.dx)?;
        let r: Vec<f64> = x.iter().zip(self.theta0()).map(|(a, b)| a - b).collect();
        let alpha = chol_solve(&l, self.dx, &r);
        let quad = dot(&r, &alpha);
        Ok(-0.5
            * (self.dx as f64 * (2.0 * core::f64::consts::PI).ln()
                + chol_logdet(&l, self.dx)
                + quad))
    }

    /// Sum of `marginal_log_lik` over a batch.
    pub fn marginal_log_lik_batch(&self, xs: &[Vec<f64>]) -> Result<f64> {
        let mut acc = 0.0;
        for x in xs {
            acc += self.marginal_log_lik(x)?;
        }
        Ok(acc)
    }

    /// Exact gradient of `log p(x)` w.r.t. the flat `theta`.
    pub fn exact_marginal_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        let dz = self.dz;
        let dx = self.dx;
        let t1 = self.theta1();
        let c = self.marginal_cov();
        let l = cholesky(&c, dx)?;

        let r: Vec<f64> = x.iter().zip(self.theta0()).map(|(a, b)| a - b).collect();
        let a = chol_solve(&l, dx, &r); // C^{-1} (x - theta0)

        let mut grad = vec![0.0; dx + dz * dx];
        grad[..dx].copy_from_slice(&a);

        // d/dtheta1 log N = -theta1 C^{-1} + (theta1 a) a^T
        let t1a = mat_vec(t1, dz, dx, &a);
        for i in 0..dz {
            let row = &t1[i * dx..(i + 1) * dx];
            let solved = chol_solve(&l, dx, row); // C^{-1} theta1_i (C symmetric)
            for j in 0..dx {
                grad[dx + i * dx + j] = -solved[j] + t1a[i] * a[j];
            }
        }
        Ok(grad)
    }

    /// Batch gradient: sum of per-datapoint exact gradients.
    pub fn exact_marginal_grad_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.theta.len()];
        for x in xs {
            let g = self.exact_marginal_grad(x)?;
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok(acc)
    }

    /// Exact Gaussian posterior `p(z | x)`.
    ///
    /// Precision `M = I + theta1 theta1^T / sigma2`, mean
    /// `M^{-1} theta1 (x - theta0) / sigma2`.
    pub fn exact_posterior(&self, x: &[f64]) -> Result<PpcaPosterior> {
        self.check_x(x)?;
        let dz = self.dz;
        let dx = self.dx;
        let t1 = self.theta1();

        let mut m = vec![0.0; dz * dz];
        for i in 0..dz {
            for j in 0..dz {
                let mut acc = 0.0;
                for a in 0..dx {
                    acc += t1[i * dx + a] * t1[j * dx + a];
                }
                m[i * dz + j] = acc / Self::SIGMA2;
            }
            m[i * dz + i] += 1.0;
        }
        let lm = cholesky(&m, dz)?;

        let r: Vec<f64> = x.iter().zip(self.theta0()).map(|(a, b)| a - b).collect();
        let mut rhs = mat_vec(t1, dz, dx, &r);
        for v in rhs.iter_mut() {
            *v /= Self::SIGMA2;
        }
        let mean = chol_solve(&lm, dz, &rhs);
        let cov = chol_inverse(&lm, dz);
        let chol_cov = cholesky(&cov, dz)?;
        Ok(PpcaPosterior { mean, cov, chol_cov })
    }

    /// Samples the DISIR augmented target exactly: uniform index, posterior
    /// draw mapped to noise space through the proposal inverse, remaining
    /// slots regrown by the AR kernel at `beta`.
    ///
    /// Used to start invariance tests at stationarity.
    pub fn sample_exact_augmented(
        &self,
        proposal: &LinearGaussianProposal,
        x: &[f64],
        k: usize,
        beta: f64,
        rng: &mut RngStream,
    ) -> Result<AugmentedState> {
        let posterior = self.exact_posterior(x)?;
        let z = posterior.sample(rng);
        let xi_ell = proposal.inverse_reparam(&z, x);
        let ell = rng.uniform_index(k);
        let mut fresh = vec![0.0; (k - 1) * self.dz];
        rng.fill_standard_normal(&mut fresh);
        let xis = propagate_slots(&xi_ell, ell, k, beta, &fresh);
        Ok(AugmentedState::new(xis, self.dz, ell))
    }

    /// Draws `n` observations from the model.
    pub fn generate_data(&self, n: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
        let noise_sd = Self::SIGMA2.sqrt();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = vec![0.0; self.dz];
            rng.fill_standard_normal(&mut z);
            let mean = mat_tvec(self.theta1(), self.dz, self.dx, &z);
            let mut x = vec![0.0; self.dx];
            for j in 0..self.dx {
                x[j] = self.theta0()[j] + mean[j] + noise_sd * rng.standard_normal();
            }
            out.push(x);
        }
        out
    }

    /// Analytic maximum-likelihood parameters for a dataset, with `sigma2`
    /// held at its fixed value: `theta0 = mean(x)` and loadings from the top
    /// eigenpairs of the sample covariance, shrunk by `sigma2`.
    pub fn ml_solution(dz: usize, dx: usize, data: &[Vec<f64>]) -> Result<PpcaMlFit> {
        assert!(!data.is_empty());
        let n = data.len() as f64;
        let mut mean = vec![0.0; dx];
        for x in data {
            for j in 0..dx {
                mean[j] += x[j];
            }
        }
        for v in mean.iter_mut() {
            *v /= n;
        }

        let mut s = vec![0.0; dx * dx];
        for x in data {
            for a in 0..dx {
                let ra = x[a] - mean[a];
                for b in 0..dx {
                    s[a * dx + b] += ra * (x[b] - mean[b]);
                }
            }
        }
        for v in s.iter_mut() {
            *v /= n;
        }

        let (vals, vecs) = sym_eigen(&s, dx);
        let mut theta = vec![0.0; dx + dz * dx];
        theta[..dx].copy_from_slice(&mean);
        for i in 0..dz.min(dx) {
            let lambda = vals[i];
            if lambda > Self::SIGMA2 {
                let scale = (lambda - Self::SIGMA2).sqrt();
                for j in 0..dx {
                    theta[dx + i * dx + j] = scale * vecs[j * dx + i];
                }
            }
        }

        let fit_model = PpcaModel::new(dz, dx, theta.clone());
        let log_likelihood = fit_model.marginal_log_lik_batch(data)?;
        Ok(PpcaMlFit { theta, log_likelihood })
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dx {
            return Err(Error::DimensionMismatch { expected: self.dx, got: x.len() });
        }
        Ok(())
    }
}

impl Model for PpcaModel {
    fn latent_dim(&self) -> usize {
        self.dz
    }

    fn obs_dim(&self) -> usize {
        self.dx
    }

    fn theta(&self) -> &[f64] {
        &self.theta
    }

    fn set_theta(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.theta.len());
        self.theta.copy_from_slice(theta);
    }

    fn theta_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dx);
        debug_assert_eq!(z.len(), self.dz);
        let mut lp = 0.0;
        for &zi in z {
            lp += norm_logpdf(zi, 0.0, 1.0);
        }
        let mean = mat_tvec(self.theta1(), self.dz, self.dx, z);
        let sd = Self::SIGMA2.sqrt();
        for j in 0..self.dx {
            lp += norm_logpdf(x[j], self.theta0()[j] + mean[j], sd);
        }
        lp
    }

    fn grad_theta_log_joint(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let r = self.residual(x, z);
        let mut grad = vec![0.0; self.dx + self.dz * self.dx];
        for j in 0..self.dx {
            grad[j] = r[j] / Self::SIGMA2;
        }
        for i in 0..self.dz {
            for j in 0..self.dx {
                grad[self.dx + i * self.dx + j] = z[i] * r[j] / Self::SIGMA2;
            }
        }
        grad
    }
}

impl GradZModel for PpcaModel {
    fn grad_z_log_joint(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let mut r = self.residual(x, z);
        for v in r.iter_mut() {
            *v /= Self::SIGMA2;
        }
        let t1r = mat_vec(self.theta1(), self.dz, self.dx, &r);
        let mut grad = vec![0.0; self.dz];
        for i in 0..self.dz {
            grad[i] = -z[i] + t1r[i];
        }
        grad
    }
}
