//! Finite-time unbiased estimators of posterior expectations and the
//! gradient estimators built from them, plus the biased ELBO/IWAE baselines,
//! the proposal-fitting gradient, and an RMSProp update.
//!
//! The lagged estimator averages `h` over a length-`L` window of chain A and
//! adds the telescoping corrections `h(A_t) - h(B_{t-L})` up to the meeting
//! time. Specializing `h` to the Rao-Blackwellized score (the normalized-
//! weight average of the joint-density theta-gradient over all `K` slots)
//! gives an unbiased estimate of the marginal log-likelihood gradient.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::coupling::{run_coupled_chains, CoupledTrajectory, KernelKind};
use crate::error::{Error, Result};
use crate::kernels::{composed_step, slot_weights, AugmentedState, BetaController};
use crate::model::{GradZModel, Model, PathwiseProposal, Proposal};
use crate::rng::RngStream;

/// Correlation-adaptation policy for the exploitation sub-step.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPolicy {
    pub init: f64,
    pub target_fraction: f64,
    pub step_size: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl Default for BetaPolicy {
    fn default() -> Self {
        BetaPolicy {
            init: 0.5,
            target_fraction: BetaController::DEFAULT_TARGET_FRACTION,
            step_size: BetaController::DEFAULT_STEP_SIZE,
            clamp_lo: BetaController::DEFAULT_CLAMP_LO,
            clamp_hi: BetaController::DEFAULT_CLAMP_HI,
        }
    }
}

/// What to do with a run that hit the iteration cap before meeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapPolicy {
    /// Fail the estimate (strict mode for unbiasedness tests).
    HardError,
    /// Keep the truncated sum and flag the estimate as biased.
    AcceptBiased,
}

/// Configuration of one coupled estimator draw.
///
/// `beta.init` is the exploitation strength used (fixed) for the whole run;
/// the remaining beta-policy fields drive [`calibrate_exploit_beta`] pilots
/// between runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Number of importance samples per kernel step.
    pub k: usize,
    /// Lag between the two chains.
    pub lag: usize,
    /// Burn-in constant of the lagged estimator.
    pub t0: usize,
    /// Composed-step cap per coupled run.
    pub max_iterations: usize,
    pub beta: BetaPolicy,
    pub kernel: KernelKind,
    pub cap_policy: CapPolicy,
    /// Base seed; stream ids are allocated by the caller.
    pub seed: u64,
}

impl EstimatorConfig {
    /// Defaults: `lag = 10`, `t0 = 1`, `max_iterations = 1000`,
    /// `beta_init = 0.5`, composed C-ISIR-DISIR kernel, accept-biased cap
    /// policy.
    pub fn new(k: usize) -> Self {
        EstimatorConfig {
            k,
            lag: 10,
            t0: 1,
            max_iterations: 1000,
            beta: BetaPolicy::default(),
            kernel: KernelKind::CIsirDisir,
            cap_policy: CapPolicy::AcceptBiased,
            seed: 0,
        }
    }

    pub fn beta_controller(&self) -> BetaController {
        let mut c = BetaController::new(0.5);
        c.beta = self.beta.init;
        c.target_fraction = self.beta.target_fraction;
        c.step_size = self.beta.step_size;
        c.clamp_lo = self.beta.clamp_lo;
        c.clamp_hi = self.beta.clamp_hi;
        assert!(c.beta >= c.clamp_lo && c.beta <= c.clamp_hi);
        c
    }

    pub fn validate(&self) {
        assert!(self.k >= 2, "K must be at least 2");
        assert!(self.lag >= 1, "lag must be at least 1");
        assert!(
            self.max_iterations >= self.t0 + self.lag,
            "iteration cap must cover t0 + lag"
        );
    }
}

/// One unbiased (or cap-truncated) estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: Vec<f64>,
    /// True when the trajectory was capped and the sum truncated.
    pub biased: bool,
}

/// A gradient estimate over a batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// Summed per-datapoint gradient estimates (length of `theta`).
    pub value: Vec<f64>,
    /// Largest meeting time across the batch.
    pub tau: usize,
    /// Whether any datapoint's run was capped.
    pub capped: bool,
    /// Total kernel sub-steps across the batch.
    pub work: usize,
    /// Largest log importance weight observed (boundedness diagnostic).
    pub max_log_weight: f64,
}

/// Tunes the exploitation strength on a marginal pilot chain.
///
/// Runs the adaptive composed kernel (ESS-targeted beta updates after every
/// composed step) for `pilot_steps` steps and returns the trailing-half mean
/// of the controller's beta. Freezing the returned value into coupled runs
/// keeps every run time-homogeneous, hence exactly unbiased, while still
/// steering the exploitation ESS toward `target_fraction * K`; adapting
/// inside a coupled run would give the lagged chain a different kernel
/// sequence at matching chain times and measurably bias the estimator.
pub fn calibrate_exploit_beta<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    k: usize,
    policy: &BetaPolicy,
    pilot_steps: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    assert!(pilot_steps >= 2);
    let mut controller = BetaController::new(0.5);
    controller.beta = policy.init;
    controller.target_fraction = policy.target_fraction;
    controller.step_size = policy.step_size;
    controller.clamp_lo = policy.clamp_lo;
    controller.clamp_hi = policy.clamp_hi;

    let mut state = AugmentedState::init_standard(k, proposal.latent_dim(), rng);
    let tail_start = pilot_steps / 2;
    let mut beta_sum = 0.0;
    for step in 0..pilot_steps {
        let (next, _) = composed_step(&state, &mut controller, model, proposal, x, rng)?;
        state = next;
        if step >= tail_start {
            beta_sum += controller.beta;
        }
    }
    let beta = beta_sum / (pilot_steps - tail_start) as f64;
    Ok(beta.clamp(policy.clamp_lo, policy.clamp_hi))
}

/// Rao-Blackwellized gradient integrand: the normalized-weight average of
/// `d/dtheta log p(x, z_k)` over all `K` mapped slots of a state.
pub fn h_rao_blackwell<M: Model, P: Proposal>(
    state: &AugmentedState,
    model: &M,
    proposal: &P,
    x: &[f64],
) -> Result<Vec<f64>> {
    let wv = slot_weights(state.xis_flat(), state.dim(), model, proposal, x)?;
    let probs = wv.normalized();
    let mut acc: Option<Vec<f64>> = None;
    for slot in 0..state.num_slots() {
        let z = proposal.reparam(state.xi(slot), x);
        let grad = model.grad_theta_log_joint(x, &z);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { slot });
        }
        match acc.as_mut() {
            None => {
                let mut first = grad;
                for g in first.iter_mut() {
                    *g *= probs[slot];
                }
                acc = Some(first);
            }
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += probs[slot] * g;
                }
            }
        }
    }
    Ok(acc.unwrap_or_default())
}

fn accumulate(acc: &mut Option<Vec<f64>>, term: Vec<f64>) {
    match acc.as_mut() {
        None => *acc = Some(term),
        Some(acc) => {
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += t;
            }
        }
    }
}

fn sub(mut a: Vec<f64>, b: &[f64]) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x -= y;
    }
    a
}

/// The lagged unbiased estimator.
///
/// `(1/L) [ sum_{t=t0}^{t0+L-1} h(A_t) + sum_{t=t0+L}^{tau-1}
/// (h(A_t) - h(B_{t-L})) ]`, evaluated in an anchored form (the first window
/// is accumulated as offsets from `h(A_t0)`) so that a constant `h` is
/// reproduced exactly. Capped trajectories follow `policy`: the truncated
/// sum over everything recorded, flagged biased, or a hard error.
pub fn unbiased_estimate<F>(
    traj: &CoupledTrajectory,
    policy: CapPolicy,
    mut h: F,
) -> Result<Estimate>
where
    F: FnMut(&AugmentedState) -> Result<Vec<f64>>,
{
    if traj.capped() && policy == CapPolicy::HardError {
        return Err(Error::CappedRun { steps: traj.last_step() });
    }
    let t0 = traj.t0();
    let lag = traj.lag();
    let tau = traj.tau();

    let anchor = h(traj.state_a(t0))?;
    let mut acc: Option<Vec<f64>> = None;
    for t in t0 + 1..t0 + lag {
        accumulate(&mut acc, sub(h(traj.state_a(t))?, &anchor));
    }
    for t in t0 + lag..tau {
        accumulate(&mut acc, sub(h(traj.state_a(t))?, &h(traj.state_b(t - lag))?));
    }

    let inv_l = 1.0 / lag as f64;
    let mut value = anchor;
    if let Some(acc) = acc {
        for (v, a) in value.iter_mut().zip(&acc) {
            *v += a * inv_l;
        }
    }
    Ok(Estimate { value, biased: traj.capped() })
}

/// The signed empirical measure behind the lagged estimator: `L` atoms of
/// mass `+1/L` on the first window of chain A and cancelling `+-1/L` pairs
/// up to the meeting time.
#[derive(Debug)]
pub struct SignedMeasure<'a> {
    base: Vec<&'a AugmentedState>,
    pairs: Vec<(&'a AugmentedState, &'a AugmentedState)>,
    lag: usize,
}

impl<'a> SignedMeasure<'a> {
    /// Atoms as `(state, signed mass)` in canonical order.
    pub fn atoms(&self) -> impl Iterator<Item = (&'a AugmentedState, f64)> + '_ {
        let mass = 1.0 / self.lag as f64;
        self.base.iter().map(move |s| (*s, mass)).chain(
            self.pairs
                .iter()
                .flat_map(move |(p, m)| [(*p, mass), (*m, -mass)]),
        )
    }

    pub fn num_atoms(&self) -> usize {
        self.base.len() + 2 * self.pairs.len()
    }

    /// Total signed mass; each correction pair carries `+1/L` and `-1/L`
    /// which cancel identically in units of `1/L`, leaving the `L` base
    /// atoms. Always exactly one.
    pub fn total_mass(&self) -> f64 {
        self.base.len() as f64 / self.lag as f64
    }

    /// Contracts the measure with `h`; reproduces [`unbiased_estimate`]
    /// bit-for-bit.
    pub fn contract<F>(&self, mut h: F) -> Result<Vec<f64>>
    where
        F: FnMut(&AugmentedState) -> Result<Vec<f64>>,
    {
        let anchor = h(self.base[0])?;
        let mut acc: Option<Vec<f64>> = None;
        for s in &self.base[1..] {
            accumulate(&mut acc, sub(h(s)?, &anchor));
        }
        for (p, m) in &self.pairs {
            accumulate(&mut acc, sub(h(p)?, &h(m)?));
        }
        let inv_l = 1.0 / self.lag as f64;
        let mut value = anchor;
        if let Some(acc) = acc {
            for (v, a) in value.iter_mut().zip(&acc) {
                *v += a * inv_l;
            }
        }
        Ok(value)
    }
}

/// Builds the signed measure of a trajectory (capped runs follow `policy`
/// exactly as in [`unbiased_estimate`]).
pub fn signed_measure(traj: &CoupledTrajectory, policy: CapPolicy) -> Result<SignedMeasure<'_>> {
    if traj.capped() && policy == CapPolicy::HardError {
        return Err(Error::CappedRun { steps: traj.last_step() });
    }
    let t0 = traj.t0();
    let lag = traj.lag();
    let tau = traj.tau();
    let base: Vec<&AugmentedState> = (t0..t0 + lag).map(|t| traj.state_a(t)).collect();
    let pairs: Vec<(&AugmentedState, &AugmentedState)> = (t0 + lag..tau)
        .map(|t| (traj.state_a(t), traj.state_b(t - lag)))
        .collect();
    Ok(SignedMeasure { base, pairs, lag })
}

/// Unbiased estimate of the batch log-likelihood gradient
/// `sum_n d/dtheta log p(x_n)`.
///
/// Each datapoint gets its own coupled run on its own substream of `stream`,
/// then the per-datapoint lagged estimates of the Rao-Blackwellized score
/// are summed.
pub fn unbiased_gradient<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x_batch: &[Vec<f64>],
    config: &EstimatorConfig,
    stream: &RngStream,
) -> Result<GradientEstimate> {
    assert!(!x_batch.is_empty(), "batch must be nonempty");
    let mut value = vec![0.0; model.theta().len()];
    let mut tau_max = 0usize;
    let mut capped = false;
    let mut work = 0usize;
    let mut max_lw = f64::NEG_INFINITY;

    for (n, x) in x_batch.iter().enumerate() {
        let mut rng = stream.substream(n as u64);
        let traj = run_coupled_chains(model, proposal, x, config, &mut rng)?;
        let est = unbiased_estimate(&traj, config.cap_policy, |state| {
            h_rao_blackwell(state, model, proposal, x)
        })?;
        for (v, e) in value.iter_mut().zip(&est.value) {
            *v += e;
        }
        tau_max = tau_max.max(traj.tau());
        capped |= traj.capped();
        work += traj.work();
        max_lw = max_lw.max(traj.max_log_weight());
    }
    Ok(GradientEstimate { value, tau: tau_max, capped, work, max_log_weight: max_lw })
}

/// Single-sample ELBO gradient w.r.t. theta: the joint score at one
/// proposal draw. Biased for the marginal likelihood gradient.
pub fn elbo_gradient_theta<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut xi = vec![0.0; proposal.latent_dim()];
    rng.fill_standard_normal(&mut xi);
    let z = proposal.reparam(&xi, x);
    let grad = model.grad_theta_log_joint(x, &z);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { slot: 0 });
    }
    Ok(grad)
}

/// IWAE gradient w.r.t. theta: the normalized-weight average of the joint
/// score over `K` independent proposal draws. Biased; `K = 1` recovers the
/// ELBO gradient on the same stream.
pub fn iwae_gradient_theta<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    assert!(k >= 1);
    let dim = proposal.latent_dim();
    let mut xis = vec![0.0; k * dim];
    rng.fill_standard_normal(&mut xis);
    let state_like = slot_weights(&xis, dim, model, proposal, x)?;
    let probs = state_like.normalized();

    let mut acc = vec![0.0; model.theta().len()];
    for slot in 0..k {
        let z = proposal.reparam(&xis[slot * dim..(slot + 1) * dim], x);
        let grad = model.grad_theta_log_joint(x, &z);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { slot });
        }
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += probs[slot] * g;
        }
    }
    Ok(acc)
}

/// Monte Carlo IWAE bound `log((1/K) sum_k w_k)` evaluated at given noise
/// draws; shared by the phi-gradient and its finite-difference checks.
pub fn iwae_bound_given_noise<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    xis: &[f64],
) -> Result<f64> {
    let dim = proposal.latent_dim();
    let wv = slot_weights(xis, dim, model, proposal, x)?;
    let k = xis.len() / dim;
    Ok(wv.log_sum_exp() - (k as f64).ln())
}

/// Reparameterized pathwise gradient of the IWAE bound w.r.t. phi, holding
/// the base noise fixed.
pub fn iwae_phi_gradient<M: GradZModel, P: PathwiseProposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    k: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    assert!(k >= 1);
    let dim = proposal.latent_dim();
    let mut xis = vec![0.0; k * dim];
    rng.fill_standard_normal(&mut xis);

    let wv = slot_weights(&xis, dim, model, proposal, x)?;
    let probs = wv.normalized();

    let mut acc = vec![0.0; proposal.phi().len()];
    for slot in 0..k {
        let xi = &xis[slot * dim..(slot + 1) * dim];
        let z = proposal.reparam(xi, x);

        // d log w / d phi = (grad_z log p - grad_z log q)^T dg/dphi
        //                   - d log q / d phi |_z
        let gz_p = model.grad_z_log_joint(x, &z);
        let gz_q = proposal.grad_z_log_density(x, &z);
        let cotangent: Vec<f64> = gz_p.iter().zip(&gz_q).map(|(a, b)| a - b).collect();
        let through_g = proposal.reparam_vjp(xi, x, &cotangent);
        let direct = proposal.grad_phi_log_density(x, &z);

        for i in 0..acc.len() {
            acc[i] += probs[slot] * (through_g[i] - direct[i]);
        }
    }
    if acc.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { slot: 0 });
    }
    Ok(acc)
}

/// One RMSProp ascent update.
///
/// `state <- decay*state + (1-decay)*grad^2`, then
/// `params <- params + lr*grad/sqrt(state + eps)`. Defaults used throughout
/// the crate: `decay = 0.9`, `eps = 1e-8`.
pub fn rmsprop_update(
    params: &mut [f64],
    state: &mut [f64],
    grad: &[f64],
    lr: f64,
    decay: f64,
    eps: f64,
) {
    assert_eq!(params.len(), grad.len(), "param/grad shape mismatch");
    assert_eq!(state.len(), grad.len(), "state/grad shape mismatch");
    for i in 0..params.len() {
        state[i] = decay * state[i] + (1.0 - decay) * grad[i] * grad[i];
        params[i] += lr * grad[i] / (state[i] + eps).sqrt();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::linear_gaussian::LinearGaussianProposal;
    use crate::models::ppca::PpcaModel;
    use crate::params::ParamLayout;

    fn setup(seed: u64) -> (PpcaModel, LinearGaussianProposal, Vec<f64>, RngStream) {
        let mut rng = RngStream::new(seed, 0);
        let model = PpcaModel::random_instance(3, 5, &mut rng);
        let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
        let mut x = vec![0.0; 5];
        rng.fill_standard_normal(&mut x);
        (model, proposal, x, rng)
    }

    #[test]
    fn rao_blackwell_collapses_on_duplicate_slots() {
        let (model, proposal, x, mut rng) = setup(101);
        let mut xi = vec![0.0; 3];
        rng.fill_standard_normal(&mut xi);
        let mut xis = Vec::new();
        for _ in 0..4 {
            xis.extend_from_slice(&xi);
        }
        let state = AugmentedState::new(xis, 3, 2);
        let h = h_rao_blackwell(&state, &model, &proposal, &x).unwrap();
        let z = proposal.reparam(&xi, &x);
        let direct = model.grad_theta_log_joint(&x, &z);
        for (a, b) in h.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rao_blackwell_matches_independent_weighted_sum() {
        let (model, proposal, x, mut rng) = setup(102);
        for _ in 0..20 {
            let state = AugmentedState::init_standard(6, 3, &mut rng);
            let h = h_rao_blackwell(&state, &model, &proposal, &x).unwrap();

            // independently coded weighted sum
            let mut lws = vec![0.0; 6];
            for slot in 0..6 {
                let z = proposal.reparam(state.xi(slot), &x);
                lws[slot] = model.log_joint(&x, &z) - proposal.log_density(&x, &z);
            }
            let max = lws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ws: Vec<f64> = lws.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = ws.iter().sum();
            let mut expect = vec![0.0; model.theta().len()];
            for slot in 0..6 {
                let z = proposal.reparam(state.xi(slot), &x);
                let g = model.grad_theta_log_joint(&x, &z);
                for (e, gi) in expect.iter_mut().zip(&g) {
                    *e += ws[slot] / total * gi;
                }
            }
            for (a, b) in h.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn weighted_slot_average_estimates_posterior_mean() {
        // long-run DISIR average of sum_k w~_k z_k equals the exact
        // posterior mean (batch-means standard errors)
        use crate::kernels::composed_step;
        let (model, proposal, x, mut rng) = setup(103);
        let post = model.exact_posterior(&x).unwrap();

        let mut state = AugmentedState::init_standard(8, 3, &mut rng);
        let mut controller = EstimatorConfig::new(8).beta_controller();
        let steps = 50_000usize;
        let batches = 50;
        let mut batch_means = vec![vec![0.0f64; 3]; batches];
        for t in 0..steps {
            let (next, _) = composed_step(&state, &mut controller, &model, &proposal, &x, &mut rng)
                .unwrap();
            state = next;
            let wv = slot_weights(state.xis_flat(), 3, &model, &proposal, &x).unwrap();
            let probs = wv.normalized();
            let b = t * batches / steps;
            for slot in 0..8 {
                let z = proposal.reparam(state.xi(slot), &x);
                for i in 0..3 {
                    batch_means[b][i] += probs[slot] * z[i] * batches as f64 / steps as f64;
                }
            }
        }
        for i in 0..3 {
            let mean: f64 = batch_means.iter().map(|b| b[i]).sum::<f64>() / batches as f64;
            let var: f64 = batch_means
                .iter()
                .map(|b| (b[i] - mean) * (b[i] - mean))
                .sum::<f64>()
                / (batches as f64 - 1.0);
            let se = (var / batches as f64).sqrt();
            assert!(
                (mean - post.mean[i]).abs() < 4.0 * se.max(1e-6),
                "coord {i}: {mean} vs {}",
                post.mean[i]
            );
        }
    }

    #[test]
    fn constant_h_is_exact() {
        let (model, proposal, x, _) = setup(104);
        let config = EstimatorConfig::new(4);
        for rep in 0..20 {
            let mut rng = RngStream::new(105, rep);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut rng).unwrap();
            let c = 3.7;
            let est = unbiased_estimate(&traj, CapPolicy::HardError, |_| Ok(vec![c, -c, 0.25]))
                .unwrap();
            assert_eq!(est.value, vec![c, -c, 0.25]);
        }
    }

    #[test]
    fn immediate_meeting_gives_plain_window_average() {
        // when tau <= t0 + L the correction sum is empty
        let (model, proposal, x, _) = setup(106);
        let mut config = EstimatorConfig::new(4);
        config.lag = 4;
        config.t0 = 1;
        for rep in 0..200 {
            let mut rng = RngStream::new(107, rep);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut rng).unwrap();
            if traj.tau() > config.t0 + config.lag {
                continue;
            }
            let h = |s: &AugmentedState| {
                h_rao_blackwell(s, &model, &proposal, &x)
            };
            let est = unbiased_estimate(&traj, CapPolicy::HardError, h).unwrap();
            // plain average over the window, computed the same anchored way
            let anchor = h(traj.state_a(1)).unwrap();
            let mut acc = vec![0.0; anchor.len()];
            for t in 2..1 + config.lag {
                let ht = h(traj.state_a(t)).unwrap();
                for (a, pair) in acc.iter_mut().zip(ht.iter().zip(&anchor)) {
                    *a += pair.0 - pair.1;
                }
            }
            let expect: Vec<f64> = anchor
                .iter()
                .zip(&acc)
                .map(|(an, ac)| an + ac / config.lag as f64)
                .collect();
            assert_eq!(est.value, expect);
            return;
        }
        panic!("no immediate-meeting trajectory found");
    }

    #[test]
    fn signed_measure_contract_is_bitwise_equal() {
        let (model, proposal, x, _) = setup(108);
        let config = EstimatorConfig::new(5);
        for rep in 0..30 {
            let mut rng = RngStream::new(109, rep);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut rng).unwrap();
            let h = |s: &AugmentedState| h_rao_blackwell(s, &model, &proposal, &x);
            let est = unbiased_estimate(&traj, CapPolicy::HardError, h).unwrap();
            let measure = signed_measure(&traj, CapPolicy::HardError).unwrap();
            let contracted = measure.contract(h).unwrap();
            assert_eq!(est.value, contracted);
        }
    }

    #[test]
    fn signed_measure_mass_and_atom_counts() {
        let (model, proposal, x, _) = setup(110);
        let mut config = EstimatorConfig::new(4);
        config.lag = 6;
        let mut seen_immediate = false;
        let mut seen_corrections = false;
        for rep in 0..300 {
            let mut rng = RngStream::new(111, rep);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut rng).unwrap();
            let m = signed_measure(&traj, CapPolicy::HardError).unwrap();
            assert_eq!(m.total_mass(), 1.0);
            let mass_sum_signed: f64 = m.atoms().map(|(_, mass)| mass).sum();
            assert!((mass_sum_signed - 1.0).abs() < 1e-12);
            if traj.tau() <= traj.t0() + traj.lag() {
                assert_eq!(m.num_atoms(), traj.lag());
                seen_immediate = true;
            } else {
                assert!(m.num_atoms() > traj.lag());
                seen_corrections = true;
            }
            if seen_immediate && seen_corrections {
                break;
            }
        }
        assert!(seen_immediate && seen_corrections);
    }

    #[test]
    fn unbiased_estimate_recovers_conjugate_posterior_mean() {
        // 1-D conjugate Gaussian target (PPCA with dz = dx = 1); the mean of
        // independent lagged estimates of h = sum w~_k z_k matches the exact
        // posterior mean
        let model = PpcaModel::new(1, 1, vec![0.2, 0.9]);
        let proposal = LinearGaussianProposal::new(1, 1);
        let x = vec![1.1];
        let post = model.exact_posterior(&x).unwrap();
        let mut config = EstimatorConfig::new(4);
        config.lag = 3;
        config.cap_policy = CapPolicy::HardError;

        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..n {
            let mut run_rng = RngStream::new(113, rep as u64);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut run_rng).unwrap();
            let est = unbiased_estimate(&traj, CapPolicy::HardError, |s| {
                let wv = slot_weights(s.xis_flat(), 1, &model, &proposal, &x)?;
                let mut acc = 0.0;
                for slot in 0..s.num_slots() {
                    acc += wv.normalized()[slot] * proposal.reparam(s.xi(slot), &x)[0];
                }
                Ok(vec![acc])
            })
            .unwrap();
            sum += est.value[0];
            sumsq += est.value[0] * est.value[0];
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - post.mean[0]).abs() < 4.0 * se,
            "{mean} vs {} (se {se})",
            post.mean[0]
        );
    }

    #[test]
    fn batch_of_one_equals_single_pipeline() {
        let (model, proposal, x, _) = setup(114);
        let config = EstimatorConfig::new(4);
        let stream = RngStream::new(115, 40);
        let grad = unbiased_gradient(&model, &proposal, &[x.clone()], &config, &stream).unwrap();

        let mut single_rng = stream.substream(0);
        let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut single_rng).unwrap();
        let est = unbiased_estimate(&traj, config.cap_policy, |s| {
            h_rao_blackwell(s, &model, &proposal, &x)
        })
        .unwrap();
        assert_eq!(grad.value, est.value);
        assert_eq!(grad.tau, traj.tau());
        assert_eq!(grad.work, traj.work());
    }

    #[test]
    fn gradient_estimates_are_seed_deterministic() {
        let (model, proposal, x, _) = setup(116);
        let config = EstimatorConfig::new(4);
        let batch = vec![x.clone(), x.iter().map(|v| v + 0.1).collect()];
        let a =
            unbiased_gradient(&model, &proposal, &batch, &config, &RngStream::new(7, 3)).unwrap();
        let b =
            unbiased_gradient(&model, &proposal, &batch, &config, &RngStream::new(7, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unbiased_gradient_mean_matches_oracle_small() {
        // small-scale unbiasedness z-test; the desk-scale version lives in
        // the acceptance suite
        let mut rng = RngStream::new(117, 0);
        let model = PpcaModel::random_instance(2, 3, &mut rng);
        let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
        let batch: Vec<Vec<f64>> = model.generate_data(2, &mut rng);
        let oracle = model.exact_marginal_grad_batch(&batch).unwrap();

        let mut config = EstimatorConfig::new(4);
        config.lag = 5;
        config.cap_policy = CapPolicy::HardError;

        let n = 20_000;
        let p = model.theta().len();
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        for rep in 0..n {
            let stream = RngStream::new(118, rep as u64);
            let g = unbiased_gradient(&model, &proposal, &batch, &config, &stream).unwrap();
            for i in 0..p {
                let delta = g.value[i] - mean[i];
                mean[i] += delta / (rep + 1) as f64;
                m2[i] += delta * (g.value[i] - mean[i]);
            }
        }
        for i in 0..p {
            let se = (m2[i] / (n as f64 - 1.0) / n as f64).sqrt();
            assert!(
                (mean[i] - oracle[i]).abs() < 4.0 * se.max(1e-12),
                "coord {i}: {} vs {}",
                mean[i],
                oracle[i]
            );
        }
    }

    #[test]
    fn iwae_k1_equals_elbo_on_same_stream() {
        let (model, proposal, x, _) = setup(119);
        let a = elbo_gradient_theta(&model, &proposal, &x, &mut RngStream::new(120, 1)).unwrap();
        let b =
            iwae_gradient_theta(&model, &proposal, &x, 1, &mut RngStream::new(120, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iwae_gradient_bias_is_detectable() {
        // the IWAE gradient is biased: with enough draws the mean departs
        // from the oracle by more than 5 standard errors somewhere
        let mut rng = RngStream::new(121, 0);
        let model = PpcaModel::random_instance(2, 3, &mut rng);
        let proposal = LinearGaussianProposal::new(2, 3); // mismatched proposal
        let mut x = vec![0.0; 3];
        rng.fill_standard_normal(&mut x);
        let oracle = model.exact_marginal_grad(&x).unwrap();

        let n = 50_000;
        let p = model.theta().len();
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        for rep in 0..n {
            let mut draw_rng = RngStream::new(122, rep as u64);
            let g = iwae_gradient_theta(&model, &proposal, &x, 4, &mut draw_rng).unwrap();
            for i in 0..p {
                let delta = g[i] - mean[i];
                mean[i] += delta / (rep + 1) as f64;
                m2[i] += delta * (g[i] - mean[i]);
            }
        }
        let mut max_z = 0.0f64;
        for i in 0..p {
            let se = (m2[i] / (n as f64 - 1.0) / n as f64).sqrt();
            max_z = max_z.max(((mean[i] - oracle[i]) / se).abs());
        }
        assert!(max_z > 5.0, "max |z| = {max_z}");
    }

    #[test]
    fn constant_weight_iwae_gradient_averages_plainly() {
        // a model proportional to the proposal has z-free weights, so the
        // IWAE gradient reduces to the plain average of per-sample scores
        struct ThetaScaledModel {
            inner: LinearGaussianProposal,
            theta: Vec<f64>,
            layout: ParamLayout,
        }
        impl Model for ThetaScaledModel {
            fn latent_dim(&self) -> usize {
                self.inner.latent_dim()
            }
            fn obs_dim(&self) -> usize {
                2
            }
            fn theta(&self) -> &[f64] {
                &self.theta
            }
            fn set_theta(&mut self, t: &[f64]) {
                self.theta.copy_from_slice(t);
            }
            fn theta_layout(&self) -> &ParamLayout {
                &self.layout
            }
            fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
                // log c(theta) = -theta^2, z-free
                self.inner.log_density(x, z) - self.theta[0] * self.theta[0]
            }
            fn grad_theta_log_joint(&self, _x: &[f64], _z: &[f64]) -> Vec<f64> {
                vec![-2.0 * self.theta[0]]
            }
        }
        let model = ThetaScaledModel {
            inner: LinearGaussianProposal::new(2, 2),
            theta: vec![0.7],
            layout: ParamLayout::new([("theta0", 1)]),
        };
        let proposal = LinearGaussianProposal::new(2, 2);
        let g =
            iwae_gradient_theta(&model, &proposal, &[0.0, 0.0], 8, &mut RngStream::new(123, 0))
                .unwrap();
        assert!((g[0] - (-1.4)).abs() < 1e-12);
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(124, 0);
        let model = PpcaModel::random_instance(2, 3, &mut rng);
        let mut proposal = LinearGaussianProposal::new(2, 3);
        let mut phi = proposal.phi().to_vec();
        rng.fill_standard_normal(&mut phi);
        for v in phi.iter_mut() {
            *v *= 0.3;
        }
        proposal.set_phi(&phi);
        let mut x = vec![0.0; 3];
        rng.fill_standard_normal(&mut x);

        let k = 5;
        // pathwise gradient and the bound must see the same noise
        let grad =
            iwae_phi_gradient(&model, &proposal, &x, k, &mut RngStream::new(125, 2)).unwrap();
        let mut noise_rng = RngStream::new(125, 2);
        let mut xis = vec![0.0; k * 2];
        noise_rng.fill_standard_normal(&mut xis);

        let mut dir = vec![0.0; phi.len()];
        rng.fill_standard_normal(&mut dir);
        let norm: f64 = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        for d in dir.iter_mut() {
            *d /= norm;
        }

        let eps = 1e-5;
        let bound_at = |shift: f64| -> f64 {
            let mut p = proposal.clone();
            let shifted: Vec<f64> =
                phi.iter().zip(&dir).map(|(v, d)| v + shift * d).collect();
            p.set_phi(&shifted);
            iwae_bound_given_noise(&model, &p, &x, &xis).unwrap()
        };
        let fd = (bound_at(eps) - bound_at(-eps)) / (2.0 * eps);
        let pathwise: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let rel = ((fd - pathwise) / fd.abs().max(1e-12)).abs();
        assert!(rel < 1e-4, "fd {fd} vs pathwise {pathwise} (rel {rel})");
    }

    #[test]
    fn phi_gradient_vanishes_at_exact_posterior() {
        // orthogonal loading rows make the factorized proposal able to match
        // the posterior exactly; the bound is maximal there
        let dz = 2;
        let dx = 4;
        let mut theta = vec![0.0; dx + dz * dx];
        theta[1] = 0.3;
        theta[dx] = 1.1;
        theta[dx + dx + 1] = -0.7;
        let model = PpcaModel::new(dz, dx, theta);
        let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
        let x = [0.4, -0.2, 0.8, 0.1];

        let n = 50_000;
        let p = proposal.phi().len();
        let mut mean = vec![0.0; p];
        let mut m2 = vec![0.0; p];
        for rep in 0..n {
            let mut rng = RngStream::new(126, rep as u64);
            let g = iwae_phi_gradient(&model, &proposal, &x, 4, &mut rng).unwrap();
            for i in 0..p {
                let delta = g[i] - mean[i];
                mean[i] += delta / (rep + 1) as f64;
                m2[i] += delta * (g[i] - mean[i]);
            }
        }
        for i in 0..p {
            let se = (m2[i] / (n as f64 - 1.0) / n as f64).sqrt();
            assert!(
                mean[i].abs() < 4.0 * se.max(1e-12),
                "phi coord {i}: mean {} se {se}",
                mean[i]
            );
        }
    }

    #[test]
    fn empty_phi_gives_empty_gradient() {
        struct FixedStdNormal {
            layout: ParamLayout,
        }
        impl Proposal for FixedStdNormal {
            fn latent_dim(&self) -> usize {
                2
            }
            fn phi(&self) -> &[f64] {
                &[]
            }
            fn set_phi(&mut self, _: &[f64]) {}
            fn phi_layout(&self) -> &ParamLayout {
                &self.layout
            }
            fn log_density(&self, _x: &[f64], z: &[f64]) -> f64 {
                z.iter().map(|v| crate::stats::norm_logpdf(*v, 0.0, 1.0)).sum()
            }
            fn reparam(&self, xi: &[f64], _x: &[f64]) -> Vec<f64> {
                xi.to_vec()
            }
            fn sample_direct(&self, _x: &[f64], rng: &mut RngStream) -> Vec<f64> {
                let mut z = vec![0.0; 2];
                rng.fill_standard_normal(&mut z);
                z
            }
        }
        impl PathwiseProposal for FixedStdNormal {
            fn grad_z_log_density(&self, _x: &[f64], z: &[f64]) -> Vec<f64> {
                z.iter().map(|v| -v).collect()
            }
            fn grad_phi_log_density(&self, _x: &[f64], _z: &[f64]) -> Vec<f64> {
                Vec::new()
            }
            fn reparam_vjp(&self, _xi: &[f64], _x: &[f64], _cot: &[f64]) -> Vec<f64> {
                Vec::new()
            }
        }

        let mut rng = RngStream::new(127, 0);
        let model = PpcaModel::random_instance(2, 3, &mut rng);
        let proposal = FixedStdNormal { layout: ParamLayout::new([("empty", 0usize)]) };
        let mut x = vec![0.0; 3];
        rng.fill_standard_normal(&mut x);
        let g = iwae_phi_gradient(&model, &proposal, &x, 3, &mut rng).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn rmsprop_examples() {
        // zero gradient leaves parameters untouched
        let mut p = vec![1.0, -2.0];
        let mut s = vec![0.5, 0.5];
        rmsprop_update(&mut p, &mut s, &[0.0, 0.0], 0.1, 0.9, 1e-8);
        assert_eq!(p, vec![1.0, -2.0]);

        // hand evaluation: p=0, g=1, s=0, lr=0.1, decay=0.9, eps=0
        let mut p = vec![0.0];
        let mut s = vec![0.0];
        rmsprop_update(&mut p, &mut s, &[1.0], 0.1, 0.9, 0.0);
        assert!((s[0] - 0.1).abs() < 1e-15);
        assert!((p[0] - 0.1 / 0.1f64.sqrt()).abs() < 1e-12);
        assert!((p[0] - 0.31622776601683794).abs() < 1e-12);

        // purity given explicit state
        let mut p1 = vec![0.3];
        let mut s1 = vec![0.2];
        let mut p2 = vec![0.3];
        let mut s2 = vec![0.2];
        rmsprop_update(&mut p1, &mut s1, &[0.7], 0.05, 0.9, 1e-8);
        rmsprop_update(&mut p2, &mut s2, &[0.7], 0.05, 0.9, 1e-8);
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }
}
