//! Coupled chains: maximal categorical coupling, the C-DISIR joint kernel,
//! and the lag-L coupled runner with meeting-time detection.
//!
//! Two chains share the auxiliary slot index and the fresh AR noise of every
//! step, and draw their resampling indices from a maximal coupling of the
//! two categorical weight distributions. At `beta = 0` the `K - 1` regrown
//! slots are bitwise shared, so a coupled index draw different from the
//! auxiliary slot makes the chains meet exactly; once equal they stay equal
//! forever. Meeting in finite time is what turns a chain pair into an
//! unbiased estimator.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::kernels::{
    disir_step, propagate_slots, slot_weights, AugmentedState, KernelDiagnostics,
};
use crate::model::{Model, Proposal};
use crate::rng::RngStream;
use crate::weights::sample_categorical;

/// Which coupled kernel a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Pure coupled ISIR: every composed step is a single `beta = 0`
    /// C-DISIR application (the exploitation sub-step disabled).
    CIsir,
    /// Coupled ISIR-DISIR: a `beta = 0` step followed by a `beta > 0` step
    /// with ESS-adapted correlation.
    CIsirDisir,
}

/// The two chain states plus the sticky meeting flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub chain_a: AugmentedState,
    pub chain_b: AugmentedState,
    pub met: bool,
}

impl CoupledState {
    pub fn new(chain_a: AugmentedState, chain_b: AugmentedState) -> Self {
        assert_eq!(chain_a.num_slots(), chain_b.num_slots());
        assert_eq!(chain_a.dim(), chain_b.dim());
        let met = chain_a == chain_b;
        CoupledState { chain_a, chain_b, met }
    }

    pub fn states_equal(&self) -> bool {
        self.chain_a == self.chain_b
    }
}

/// Maximal coupling of two categorical distributions given by unnormalized
/// nonnegative weights.
///
/// Returns `(ell, ell_bar, coupled)`. Marginally `ell ~ Cat(w)` and
/// `ell_bar ~ Cat(v)`; the indices agree with the maximal probability
/// `1 - gamma`, where `gamma` is the total variation distance between the
/// two normalized vectors.
pub fn coupled_categorical(
    w: &[f64],
    v: &[f64],
    rng: &mut RngStream,
) -> Result<(usize, usize, bool)> {
    if w.len() != v.len() || w.is_empty() {
        return Err(Error::DimensionMismatch { expected: w.len(), got: v.len() });
    }
    let sum_w: f64 = w.iter().sum();
    let sum_v: f64 = v.iter().sum();
    if !(sum_w > 0.0) || !(sum_v > 0.0) || !sum_w.is_finite() || !sum_v.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    if w.iter().chain(v).any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::DegenerateWeights);
    }

    let k = w.len();
    let mut wn = vec![0.0; k];
    let mut vn = vec![0.0; k];
    for i in 0..k {
        wn[i] = w[i] / sum_w;
        vn[i] = v[i] / sum_v;
    }
    let gamma = 0.5 * wn.iter().zip(&vn).map(|(a, b)| (a - b).abs()).sum::<f64>();

    let u = rng.uniform();
    let overlap: f64 = wn.iter().zip(&vn).map(|(a, b)| a.min(*b)).sum();
    if u <= 1.0 - gamma && overlap > 0.0 {
        let probs: Vec<f64> = wn.iter().zip(&vn).map(|(a, b)| a.min(*b) / overlap).collect();
        let ell = sample_categorical(&probs, rng.uniform());
        Ok((ell, ell, true))
    } else {
        let excess_w: f64 = wn.iter().zip(&vn).map(|(a, b)| (a - b).max(0.0)).sum();
        let excess_v: f64 = vn.iter().zip(&wn).map(|(a, b)| (a - b).max(0.0)).sum();
        let pw: Vec<f64> = wn.iter().zip(&vn).map(|(a, b)| (a - b).max(0.0) / excess_w).collect();
        let pv: Vec<f64> = vn.iter().zip(&wn).map(|(a, b)| (a - b).max(0.0) / excess_v).collect();
        let ell = sample_categorical(&pw, rng.uniform());
        let ell_bar = sample_categorical(&pv, rng.uniform());
        Ok((ell, ell_bar, false))
    }
}

/// One C-DISIR transition of both chains.
///
/// Shares the auxiliary slot and the fresh noise between the chains, regrows
/// each chain's slots from its own retained sample, and draws the pair of
/// resampling indices from the maximal coupling of the two weight vectors.
/// Ignoring either chain, the law is exactly one `disir_step` at the same
/// `beta`. Returns chain A's diagnostics.
pub fn cdisir_step<M: Model, P: Proposal>(
    pair: &CoupledState,
    beta: f64,
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(CoupledState, KernelDiagnostics)> {
    let k = pair.chain_a.num_slots();
    let dim = pair.chain_a.dim();

    let ell_aux = rng.uniform_index(k);
    let mut fresh = vec![0.0; (k - 1) * dim];
    rng.fill_standard_normal(&mut fresh);

    let xis_a = propagate_slots(pair.chain_a.selected_xi(), ell_aux, k, beta, &fresh);
    let xis_b = propagate_slots(pair.chain_b.selected_xi(), ell_aux, k, beta, &fresh);

    let wa = slot_weights(&xis_a, dim, model, proposal, x)?;
    let wb = slot_weights(&xis_b, dim, model, proposal, x)?;

    let (ell_a, ell_b, _) = coupled_categorical(wa.normalized(), wb.normalized(), rng)?;

    let diag = KernelDiagnostics {
        ess_last: wa.ess(),
        accepted_move: ell_a != ell_aux,
        max_log_weight: wa.max_log_weight().max(wb.max_log_weight()),
    };
    let next = CoupledState {
        chain_a: AugmentedState::new(xis_a, dim, ell_a),
        chain_b: AugmentedState::new(xis_b, dim, ell_b),
        met: pair.met,
    };
    Ok((next, diag))
}

/// One composed coupled step at a fixed exploitation strength.
///
/// `CIsirDisir` applies C-DISIR at `beta = 0` then at `beta_exploit`;
/// `CIsir` applies the single `beta = 0` step. The meeting flag is set when
/// the two full augmented states are equal after the composed step.
///
/// `beta_exploit` must be held fixed for the lifetime of a coupled run:
/// both chains have to use the same beta at the same wall-clock step to be
/// able to meet, and adapting beta inside a run gives the lagged chain a
/// different kernel sequence at matching chain times, which measurably
/// biases the finite-time estimator. Adaptation belongs in marginal-chain
/// pilots between runs (see the estimators module).
pub fn composed_coupled_step<M: Model, P: Proposal>(
    pair: &CoupledState,
    beta_exploit: f64,
    kind: KernelKind,
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(CoupledState, KernelDiagnostics)> {
    let (mut next, diag) = match kind {
        KernelKind::CIsir => cdisir_step(pair, 0.0, model, proposal, x, rng)?,
        KernelKind::CIsirDisir => {
            let (explored, diag0) = cdisir_step(pair, 0.0, model, proposal, x, rng)?;
            let (exploited, diag1) = cdisir_step(&explored, beta_exploit, model, proposal, x, rng)?;
            let merged = KernelDiagnostics {
                ess_last: diag1.ess_last,
                accepted_move: diag1.accepted_move,
                max_log_weight: diag0.max_log_weight.max(diag1.max_log_weight),
            };
            (exploited, merged)
        }
    };
    next.met = next.met || next.states_equal();
    Ok((next, diag))
}

/// The lagged pair of chain histories produced by [`run_coupled_chains`].
///
/// Chain A's composed-step states are `state_a(0..=last_step())`; chain B
/// runs `lag` steps behind, so its state at index `s` was produced jointly
/// with chain A's at `s + lag`. `tau` is the first composed-step index
/// `t >= lag` with full-state equality; for capped runs `tau` is
/// `last_step() + 1` so the truncated estimator sums stay well-defined.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    history_a: Vec<AugmentedState>,
    history_b: Vec<AugmentedState>,
    tau: usize,
    lag: usize,
    t0: usize,
    capped: bool,
    work: usize,
    max_log_weight: f64,
    mean_exploit_ess: f64,
}

impl CoupledTrajectory {
    pub fn state_a(&self, t: usize) -> &AugmentedState {
        &self.history_a[t]
    }

    pub fn state_b(&self, s: usize) -> &AugmentedState {
        &self.history_b[s]
    }

    pub fn last_step(&self) -> usize {
        self.history_a.len() - 1
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn capped(&self) -> bool {
        self.capped
    }

    /// Total single-chain kernel sub-steps spent on this run.
    pub fn work(&self) -> usize {
        self.work
    }

    /// Largest log importance weight observed anywhere in the run
    /// (boundedness diagnostic).
    pub fn max_log_weight(&self) -> f64 {
        self.max_log_weight
    }

    /// Mean ESS of chain A's final sub-step across the run; feed for
    /// between-run beta adaptation.
    pub fn mean_exploit_ess(&self) -> f64 {
        self.mean_exploit_ess
    }
}

/// Runs the full coupled procedure for one observation.
///
/// Chain A starts from the standard augmented initialization and advances
/// alone for `lag` composed steps; chain B is initialized independently from
/// the same distribution; the pair then advances under the coupled composed
/// kernel until the chains have met and at least `t0 + lag - 1` steps have
/// been taken. A run that reaches `max_iterations` composed steps first is
/// flagged capped instead of erroring; the caller chooses the policy.
///
/// The exploitation strength is `config.beta.init`, held fixed for the
/// whole run so that both chains evolve under one time-homogeneous kernel;
/// see [`crate::estimators::calibrate_exploit_beta`] for tuning it.
pub fn run_coupled_chains<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    config: &EstimatorConfig,
    rng: &mut RngStream,
) -> Result<CoupledTrajectory> {
    config.validate();
    let k = config.k;
    let dim = proposal.latent_dim();
    let lag = config.lag;
    let beta_exploit = config.beta.init;

    // independent draws from the same initial distribution, A's noise first
    let mut xis_a = vec![0.0; k * dim];
    rng.fill_standard_normal(&mut xis_a);
    let mut xis_b = vec![0.0; k * dim];
    rng.fill_standard_normal(&mut xis_b);
    let ell_a = rng.uniform_index(k);
    let ell_b = rng.uniform_index(k);
    let state_a0 = AugmentedState::new(xis_a, dim, ell_a);
    let state_b0 = AugmentedState::new(xis_b, dim, ell_b);

    let substeps_marginal = match config.kernel {
        KernelKind::CIsir => 1,
        KernelKind::CIsirDisir => 2,
    };

    let mut history_a = Vec::with_capacity(lag + 16);
    let mut history_b = Vec::with_capacity(16);
    history_a.push(state_a0);
    history_b.push(state_b0);
    let mut work = 0usize;
    let mut max_lw = f64::NEG_INFINITY;
    let mut ess_sum = 0.0;
    let mut ess_count = 0usize;

    // warm up chain A alone under the marginal kernel at the same beta
    for _ in 0..lag {
        let prev = history_a.last().unwrap();
        let (next, diag) = match config.kernel {
            KernelKind::CIsir => disir_step(prev, 0.0, model, proposal, x, rng)?,
            KernelKind::CIsirDisir => {
                let (explored, _) = disir_step(prev, 0.0, model, proposal, x, rng)?;
                disir_step(&explored, beta_exploit, model, proposal, x, rng)?
            }
        };
        work += substeps_marginal;
        max_lw = max_lw.max(diag.max_log_weight);
        ess_sum += diag.ess_last;
        ess_count += 1;
        history_a.push(next);
    }

    let mut pair = CoupledState::new(
        history_a.last().unwrap().clone(),
        history_b[0].clone(),
    );
    let mut t = lag;
    let mut tau = if pair.met { Some(lag) } else { None };
    let mut capped = false;

    while t < config.t0 + lag - 1 || !pair.met {
        if t >= config.max_iterations {
            capped = true;
            break;
        }
        let (next, diag) = composed_coupled_step(
            &pair,
            beta_exploit,
            config.kernel,
            model,
            proposal,
            x,
            rng,
        )?;
        work += 2 * substeps_marginal;
        max_lw = max_lw.max(diag.max_log_weight);
        ess_sum += diag.ess_last;
        ess_count += 1;
        t += 1;
        history_a.push(next.chain_a.clone());
        history_b.push(next.chain_b.clone());
        if tau.is_none() && next.met {
            tau = Some(t);
        }
        pair = next;
    }

    let tau = match tau {
        Some(t_meet) => t_meet,
        None => t + 1,
    };
    Ok(CoupledTrajectory {
        history_a,
        history_b,
        tau,
        lag,
        t0: config.t0,
        capped,
        work,
        max_log_weight: max_lw,
        mean_exploit_ess: ess_sum / ess_count.max(1) as f64,
    })
}
