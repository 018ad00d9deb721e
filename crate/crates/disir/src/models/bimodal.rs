//! 1-D bimodal mixture target for qualitative kernel traces.
//!
//! The default instance pairs two well-separated Gaussian modes with a
//! standard normal proposal that is too narrow to cover either mode well, so
//! importance weights vary strongly across the space. Plain ISIR gets stuck
//! on high-weight states there while the composed ISIR-DISIR kernel keeps
//! proposing acceptable local moves.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::kernels::{composed_step, disir_step, AugmentedState, BetaController};
use crate::model::{Model, Proposal};
use crate::models::linear_gaussian::LinearGaussianProposal;
use crate::params::ParamLayout;
use crate::rng::RngStream;
use crate::stats::{log_add_exp, norm_cdf, norm_logpdf};

/// Mixture of two 1-D Gaussians.
#[derive(Debug, Clone)]
pub struct BimodalToy1D {
    weights: [f64; 2],
    means: [f64; 2],
    sds: [f64; 2],
    layout: ParamLayout,
}

impl BimodalToy1D {
    pub fn new(weights: [f64; 2], means: [f64; 2], sds: [f64; 2]) -> Self {
        assert!((weights[0] + weights[1] - 1.0).abs() < 1e-12);
        assert!(sds.iter().all(|s| *s > 0.0));
        BimodalToy1D { weights, means, sds, layout: ParamLayout::new([("empty", 0usize)]) }
    }

    /// Mixture CDF, the oracle for goodness-of-fit checks on traces.
    pub fn cdf(&self, z: f64) -> f64 {
        self.weights[0] * norm_cdf((z - self.means[0]) / self.sds[0])
            + self.weights[1] * norm_cdf((z - self.means[1]) / self.sds[1])
    }

    /// The standard normal proposal used in the toy comparison.
    pub fn standard_proposal() -> LinearGaussianProposal {
        LinearGaussianProposal::new(1, 0)
    }
}

impl Default for BimodalToy1D {
    /// Modes at -2 and 2 with standard deviation 0.5, equal weights.
    fn default() -> Self {
        BimodalToy1D::new([0.5, 0.5], [-2.0, 2.0], [0.5, 0.5])
    }
}

impl Model for BimodalToy1D {
    fn latent_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        0
    }

    fn theta(&self) -> &[f64] {
        &[]
    }

    fn set_theta(&mut self, _theta: &[f64]) {}

    fn theta_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_joint(&self, _x: &[f64], z: &[f64]) -> f64 {
        let a = self.weights[0].ln() + norm_logpdf(z[0], self.means[0], self.sds[0]);
        let b = self.weights[1].ln() + norm_logpdf(z[0], self.means[1], self.sds[1]);
        log_add_exp(a, b)
    }

    fn grad_theta_log_joint(&self, _x: &[f64], _z: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// Which kernel drives a qualitative trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKernel {
    /// Plain reparameterized ISIR (`beta = 0` every step).
    Isir,
    /// The composed exploration/exploitation kernel with beta adaptation.
    IsirDisir,
}

/// One emitted trace point.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub z: f64,
    pub beta: f64,
    pub ess: f64,
}

/// Runs the named kernel on the toy target and records the selected sample,
/// the beta in effect, and the proposal ESS at every step.
pub fn toy_trace(
    target: &BimodalToy1D,
    kernel: ToyKernel,
    k: usize,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<TraceRow>> {
    let proposal = BimodalToy1D::standard_proposal();
    let mut state = AugmentedState::init_standard(k, 1, rng);
    let mut controller = BetaController::new(0.5);
    let mut rows = Vec::with_capacity(steps);

    for t in 0..steps {
        let (next, diag, beta_used) = match kernel {
            ToyKernel::Isir => {
                let (s, d) = disir_step(&state, 0.0, target, &proposal, &[], rng)?;
                (s, d, 0.0)
            }
            ToyKernel::IsirDisir => {
                let beta = controller.beta;
                let (s, d) = composed_step(&state, &mut controller, target, &proposal, &[], rng)?;
                (s, d, beta)
            }
        };
        state = next;
        let z = proposal.reparam(state.selected_xi(), &[]);
        rows.push(TraceRow { t, z: z[0], beta: beta_used, ess: diag.ess_last });
    }
    Ok(rows)
}

/// Mean length of runs of consecutive identical trace values; the
/// stuck-chain statistic for the ISIR/DISIR comparison.
pub fn mean_repeat_run_length(zs: &[f64]) -> f64 {
    if zs.is_empty() {
        return 0.0;
    }
    let mut runs = 1usize;
    for w in zs.windows(2) {
        if w[1] != w[0] {
            runs += 1;
        }
    }
    zs.len() as f64 / runs as f64
}
