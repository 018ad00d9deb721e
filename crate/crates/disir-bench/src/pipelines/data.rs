//! Shared benchmark setup: the PPCA instance, its synthetic data, and the
//! IWAE-fitted proposal, all derived deterministically from the config seed.
//!
//! Stream-id allocation: small fixed ids for setup stages, and one disjoint
//! block per (arm, replicate) for estimator draws. Replicate streams spawn
//! per-datapoint substreams internally, so reductions are independent of
//! execution order.

use disir::estimators::{calibrate_exploit_beta, iwae_phi_gradient, rmsprop_update};
use disir::models::{LinearGaussianProposal, PpcaModel};
use disir::{Proposal, RngStream};

use crate::config::{ModelConfig, ProposalFitConfig, RunConfig};
use crate::BenchError;

pub const STREAM_MODEL: u64 = 0;
pub const STREAM_DATA: u64 = 1;
pub const STREAM_PROPOSAL_FIT: u64 = 2;
pub const STREAM_FIT_TRUTH: u64 = 3;
pub const STREAM_FIT_DATA: u64 = 4;
pub const STREAM_FIT_INIT: u64 = 5;
pub const STREAM_BETA_PILOT: u64 = 6;

/// Arm indices for replicate stream blocks.
pub const ARM_BIAS_BASE: u64 = 1;
pub const ARM_MEETING_BASE: u64 = 16;
pub const ARM_FIT_THETA: u64 = 64;
pub const ARM_FIT_PHI: u64 = 65;
pub const ARM_FIT_PILOT: u64 = 66;
pub const ARM_TOY: u64 = 80;

/// Stream for one replicate of one arm; substreams remain available for
/// per-datapoint runs.
pub fn replicate_stream(seed: u64, arm: u64, replicate: u64) -> RngStream {
    debug_assert!(arm < 1 << 12);
    debug_assert!(replicate < 1 << 34);
    RngStream::new(seed, (arm << 34) | replicate)
}

/// The benchmark target: model, data batch, fitted proposal.
pub struct BenchSetup {
    pub model: PpcaModel,
    pub data: Vec<Vec<f64>>,
    pub proposal: LinearGaussianProposal,
}

/// Builds the §-style benchmark triple: random PPCA parameters, a batch
/// drawn from the model, and a proposal fitted to the batch by RMSProp
/// ascent on the importance-weighted bound.
pub fn build_setup(config: &RunConfig) -> Result<BenchSetup, BenchError> {
    let model = {
        let mut rng = RngStream::new(config.seed, STREAM_MODEL);
        PpcaModel::random_instance(config.model.dz, config.model.dx, &mut rng)
    };
    let data = {
        let mut rng = RngStream::new(config.seed, STREAM_DATA);
        model.generate_data(config.model.n_data, &mut rng)
    };
    let proposal = fit_proposal(&model, &data, &config.proposal_fit, config.seed)?;
    Ok(BenchSetup { model, data, proposal })
}

/// Fits the linear-Gaussian proposal by maximizing the IWAE bound.
pub fn fit_proposal(
    model: &PpcaModel,
    data: &[Vec<f64>],
    fit: &ProposalFitConfig,
    seed: u64,
) -> Result<LinearGaussianProposal, BenchError> {
    let mut proposal = LinearGaussianProposal::new(model.dz(), model.dx());
    if fit.iters == 0 {
        return Ok(proposal);
    }
    let mut rng = RngStream::new(seed, STREAM_PROPOSAL_FIT);
    let mut phi = proposal.phi().to_vec();
    let mut opt_state = vec![0.0; phi.len()];
    for iter in 0..fit.iters {
        let mut grad = vec![0.0; phi.len()];
        for x in data {
            let g = iwae_phi_gradient(model, &proposal, x, fit.k, &mut rng)?;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / data.len() as f64;
            }
        }
        let lr = if fit.lr_decay_iters > 0.0 {
            fit.lr / (1.0 + iter as f64 / fit.lr_decay_iters)
        } else {
            fit.lr
        };
        rmsprop_update(&mut phi, &mut opt_state, &grad, lr, 0.9, 1e-8);
        proposal.set_phi(&phi);
    }
    Ok(proposal)
}

/// Calibrates the frozen exploitation strength for coupled runs at a given
/// K: one adaptive marginal pilot per datapoint, averaged over the batch.
pub fn calibrate_beta(
    config: &RunConfig,
    setup: &BenchSetup,
    k: usize,
) -> Result<f64, BenchError> {
    let policy = disir::estimators::BetaPolicy {
        init: config.estimator.beta_init,
        target_fraction: config.estimator.beta_target_fraction,
        step_size: config.estimator.beta_step_size,
        ..Default::default()
    };
    let mut sum = 0.0;
    for (n, x) in setup.data.iter().enumerate() {
        let mut rng = RngStream::new(config.seed, STREAM_BETA_PILOT).substream(n as u64);
        sum += calibrate_exploit_beta(
            &setup.model,
            &setup.proposal,
            x,
            k,
            &policy,
            config.estimator.beta_pilot_steps,
            &mut rng,
        )?;
    }
    Ok(sum / setup.data.len() as f64)
}

/// Sanity bounds for a generated model config.
pub fn validate_model(config: &ModelConfig) -> Result<(), BenchError> {
    if config.dz == 0 || config.dx == 0 || config.n_data == 0 {
        return Err(BenchError::Config("model dimensions must be positive".into()));
    }
    Ok(())
}
