//! PPCA maximum-likelihood fitting with unbiased gradients.
//!
//! Alternates RMSProp ascent steps on theta, driven by the coupled unbiased
//! gradient estimator, with IWAE-bound ascent steps on the proposal
//! parameters, and logs the exact marginal log-likelihood (closed form)
//! after every epoch. The analytic maximum-likelihood solution provides the
//! convergence oracle.

use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use disir::coupling::run_coupled_chains;
use disir::estimators::{
    calibrate_exploit_beta, h_rao_blackwell, iwae_phi_gradient, rmsprop_update,
    unbiased_estimate, BetaPolicy, CapPolicy,
};
use disir::models::{LinearGaussianProposal, PpcaModel};
use disir::{Model, Proposal, RngStream};

use crate::config::{FitConfig, RunConfig};
use crate::pipelines::data::{
    replicate_stream, ARM_FIT_PHI, ARM_FIT_PILOT, ARM_FIT_THETA, STREAM_FIT_DATA,
    STREAM_FIT_INIT, STREAM_FIT_TRUTH,
};
use crate::table::{write_raw_csv, write_summary_json, Metadata, RawRow, Table};
use crate::BenchError;

pub struct FitResult {
    /// Exact data log-likelihood after each epoch.
    pub curve: Vec<f64>,
    pub initial_ll: f64,
    pub ml_ll: f64,
    pub capped_runs: usize,
    pub total_runs: usize,
}

impl FitResult {
    pub fn final_ll(&self) -> f64 {
        *self.curve.last().unwrap_or(&self.initial_ll)
    }

    /// Relative gap to the analytic maximum-likelihood value.
    pub fn gap_fraction(&self) -> f64 {
        (self.ml_ll - self.final_ll()) / self.ml_ll.abs()
    }

    /// Means of consecutive `window`-epoch blocks of the curve.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.curve
            .chunks(window)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }

    /// Whether the window means are non-decreasing.
    pub fn windows_monotone(&self, window: usize) -> bool {
        self.window_means(window).windows(2).all(|w| w[1] >= w[0])
    }
}

/// Parallel unbiased batch gradient: `reps` independent coupled runs per
/// datapoint, each on its own substream, averaged over the replications and
/// summed in index order, then scaled to the full dataset.
fn theta_gradient(
    model: &PpcaModel,
    proposal: &LinearGaussianProposal,
    batch: &[&Vec<f64>],
    est_config: &disir::estimators::EstimatorConfig,
    stream: &RngStream,
    reps: usize,
    scale: f64,
) -> Result<(Vec<f64>, usize), disir::Error> {
    let jobs = reps * batch.len();
    let per_job: Vec<Result<(Vec<f64>, bool), disir::Error>> = (0..jobs)
        .into_par_iter()
        .map(|j| {
            let x = batch[j % batch.len()];
            let mut rng = stream.substream(j as u64);
            let traj = run_coupled_chains(model, proposal, x, est_config, &mut rng)?;
            let capped = traj.capped();
            let est = unbiased_estimate(&traj, CapPolicy::AcceptBiased, |s| {
                h_rao_blackwell(s, model, proposal, x)
            })?;
            Ok((est.value, capped))
        })
        .collect();

    let mut grad = vec![0.0; model.theta().len()];
    let mut capped = 0usize;
    for item in per_job {
        let (g, was_capped) = item?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        capped += usize::from(was_capped);
    }
    for g in grad.iter_mut() {
        *g *= scale / reps as f64;
    }
    Ok((grad, capped))
}

fn phi_gradient(
    model: &PpcaModel,
    proposal: &LinearGaussianProposal,
    batch: &[&Vec<f64>],
    k: usize,
    stream: &RngStream,
) -> Result<Vec<f64>, disir::Error> {
    let per_point: Vec<Result<Vec<f64>, disir::Error>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = stream.substream(i as u64);
            iwae_phi_gradient(model, proposal, x, k, &mut rng)
        })
        .collect();
    let mut grad = vec![0.0; proposal.phi().len()];
    for item in per_point {
        let g = item?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b / batch.len() as f64;
        }
    }
    Ok(grad)
}

pub fn run(config: &RunConfig) -> Result<FitResult, BenchError> {
    let fit: &FitConfig = config
        .fit
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing [fit] section".into()))?;

    let truth = {
        let mut rng = RngStream::new(config.seed, STREAM_FIT_TRUTH);
        PpcaModel::random_instance(fit.dz, fit.dx, &mut rng)
    };
    let data = {
        let mut rng = RngStream::new(config.seed, STREAM_FIT_DATA);
        truth.generate_data(fit.n_data, &mut rng)
    };
    let ml = PpcaModel::ml_solution(fit.dz, fit.dx, &data)?;

    let mut model = {
        let mut rng = RngStream::new(config.seed, STREAM_FIT_INIT);
        PpcaModel::random_instance(fit.dz, fit.dx, &mut rng)
    };
    // warm-start the proposal against the initial model so the first
    // coupled runs already meet; afterwards phi keeps tracking theta
    let mut proposal =
        crate::pipelines::data::fit_proposal(&model, &data, &config.proposal_fit, config.seed)?;

    let mut theta = model.theta().to_vec();
    let mut theta_opt = vec![0.0; theta.len()];
    let mut phi = proposal.phi().to_vec();
    let mut phi_opt = vec![0.0; phi.len()];

    let initial_ll = model.marginal_log_lik_batch(&data)?;
    let n_batches = fit.n_data.div_ceil(fit.minibatch);
    let scale = |batch_len: usize| fit.n_data as f64 / batch_len as f64;

    let mut curve = Vec::with_capacity(fit.epochs);
    let mut capped_runs = 0usize;
    let mut total_runs = 0usize;

    for epoch in 0..fit.epochs {
        let lr_factor = if fit.lr_decay_epochs > 0.0 {
            1.0 / (1.0 + epoch as f64 / fit.lr_decay_epochs)
        } else {
            1.0
        };

        // retune the frozen exploitation strength for the current (theta,
        // phi) on a dedicated pilot stream; exogenous to the epoch's draws
        let beta_epoch = {
            let policy = BetaPolicy {
                init: config.estimator.beta_init,
                target_fraction: config.estimator.beta_target_fraction,
                step_size: config.estimator.beta_step_size,
                ..Default::default()
            };
            let mut pilot_rng = replicate_stream(config.seed, ARM_FIT_PILOT, epoch as u64);
            calibrate_exploit_beta(
                &model,
                &proposal,
                &data[0],
                fit.k,
                &policy,
                config.estimator.beta_pilot_steps,
                &mut pilot_rng,
            )?
        };

        let reps = if fit.replication_epochs > 0.0 {
            1 + (epoch as f64 / fit.replication_epochs) as usize
        } else {
            1
        };

        for m in 0..n_batches {
            let lo = m * fit.minibatch;
            let hi = (lo + fit.minibatch).min(fit.n_data);
            let batch: Vec<&Vec<f64>> = data[lo..hi].iter().collect();
            let step = (epoch * n_batches + m) as u64;

            let mut est_config =
                config.estimator_config(fit.k, disir::coupling::KernelKind::CIsirDisir);
            est_config.beta.init = beta_epoch;
            let theta_stream = replicate_stream(config.seed, ARM_FIT_THETA, step);
            let (grad, capped) = theta_gradient(
                &model,
                &proposal,
                &batch,
                &est_config,
                &theta_stream,
                reps,
                scale(batch.len()),
            )?;
            capped_runs += capped;
            total_runs += reps * batch.len();
            rmsprop_update(
                &mut theta,
                &mut theta_opt,
                &grad,
                fit.lr_theta * lr_factor,
                0.9,
                1e-8,
            );
            model.set_theta(&theta);

            // phi tracks the moving theta, so its rate does not decay
            let phi_stream = replicate_stream(config.seed, ARM_FIT_PHI, step);
            let pgrad = phi_gradient(&model, &proposal, &batch, fit.phi_k, &phi_stream)?;
            rmsprop_update(&mut phi, &mut phi_opt, &pgrad, fit.lr_phi, 0.9, 1e-8);
            proposal.set_phi(&phi);
        }
        let ll = model.marginal_log_lik_batch(&data)?;
        if !ll.is_finite() {
            return Err(BenchError::Numerical(format!(
                "log-likelihood diverged at epoch {epoch}"
            )));
        }
        curve.push(ll);
    }

    Ok(FitResult { curve, initial_ll, ml_ll: ml.log_likelihood, capped_runs, total_runs })
}

impl Table for FitResult {
    fn raw_rows(&self) -> Box<dyn Iterator<Item = RawRow> + '_> {
        Box::new(self.curve.iter().enumerate().map(|(epoch, ll)| RawRow {
            name: "exact_loglik".to_string(),
            coordinate: 0,
            replicate: epoch as i64,
            value: *ll,
        }))
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "epochs": self.curve.len(),
            "initial_loglik": self.initial_ll,
            "final_loglik": self.final_ll(),
            "ml_oracle_loglik": self.ml_ll,
            "gap_fraction": self.gap_fraction(),
            "windows_monotone_10": self.windows_monotone(10),
            "window_means_10": self.window_means(10),
            "capped_runs": self.capped_runs,
            "total_runs": self.total_runs,
        })
    }
}

pub fn run_and_write(
    config: &RunConfig,
    out_dir: &Path,
    meta: &Metadata,
) -> Result<serde_json::Value, BenchError> {
    let result = run(config)?;
    let summary = result.summary();
    write_raw_csv(&out_dir.join("fit_curve.csv"), meta, &result)?;
    write_summary_json(&out_dir.join("fit_summary.json"), meta, &summary)?;
    Ok(summary)
}
