//! Single-chain MCMC kernels: reparameterized ISIR, DISIR, and the composed
//! exploration/exploitation kernel with ESS-driven correlation adaptation.
//!
//! DISIR keeps `K` reparameterization-noise vectors and a selected index.
//! One step retains the selected noise vector in a uniformly chosen slot and
//! regrows the remaining slots with an autoregressive normal kernel of
//! correlation `beta`, so fresh proposals cluster near the retained sample
//! when `beta` is close to one. At `beta = 0` the step reduces to a
//! reparameterized ISIR kernel.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::model::{Model, Proposal};
use crate::rng::RngStream;
use crate::weights::{log_weight, log_weight_z, normalize_log_weights, sample_categorical, WeightVector};

/// The DISIR chain state: `K` noise vectors plus the selected slot index.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    xis: Vec<f64>,
    dim: usize,
    ell: usize,
}

impl AugmentedState {
    /// Wraps a flat `K*dim` noise buffer. `ell` is the selected slot.
    pub fn new(xis: Vec<f64>, dim: usize, ell: usize) -> Self {
        assert!(dim >= 1 && xis.len() % dim == 0);
        let k = xis.len() / dim;
        assert!(k >= 2, "augmented state needs K >= 2 slots");
        assert!(ell < k);
        AugmentedState { xis, dim, ell }
    }

    /// Draws all slots i.i.d. standard normal and the index uniformly.
    pub fn init_standard(k: usize, dim: usize, rng: &mut RngStream) -> Self {
        let mut xis = vec![0.0; k * dim];
        rng.fill_standard_normal(&mut xis);
        let ell = rng.uniform_index(k);
        AugmentedState::new(xis, dim, ell)
    }

    pub fn num_slots(&self) -> usize {
        self.xis.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn xi(&self, slot: usize) -> &[f64] {
        &self.xis[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn selected_xi(&self) -> &[f64] {
        self.xi(self.ell)
    }

    pub fn xis_flat(&self) -> &[f64] {
        &self.xis
    }

    pub fn all_finite(&self) -> bool {
        self.xis.iter().all(|v| v.is_finite())
    }
}

/// ESS-driven controller for the DISIR correlation strength.
///
/// After each exploitation step the controller nudges `beta` by
/// `-step_size * (ESS - target_fraction * K)` and clamps the result, steering
/// the effective sample size of the dependent proposals toward
/// `target_fraction * K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaController {
    pub beta: f64,
    pub target_fraction: f64,
    pub step_size: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
}

impl BetaController {
    pub const DEFAULT_TARGET_FRACTION: f64 = 0.3;
    pub const DEFAULT_STEP_SIZE: f64 = 0.01;
    pub const DEFAULT_CLAMP_LO: f64 = 1e-6;
    pub const DEFAULT_CLAMP_HI: f64 = 1.0 - 1e-6;

    /// Controller with the default adaptation constants.
    pub fn new(beta_init: f64) -> Self {
        let c = BetaController {
            beta: beta_init,
            target_fraction: Self::DEFAULT_TARGET_FRACTION,
            step_size: Self::DEFAULT_STEP_SIZE,
            clamp_lo: Self::DEFAULT_CLAMP_LO,
            clamp_hi: Self::DEFAULT_CLAMP_HI,
        };
        assert!(
            c.beta >= c.clamp_lo && c.beta <= c.clamp_hi,
            "initial beta outside clamp range"
        );
        c
    }
}

/// One controller update from an observed ESS value.
pub fn update_beta(controller: &BetaController, ess_value: f64, k: usize) -> BetaController {
    let mut next = controller.clone();
    let raw = controller.beta
        - controller.step_size * (ess_value - controller.target_fraction * k as f64);
    next.beta = raw.clamp(controller.clamp_lo, controller.clamp_hi);
    next
}

/// Per-step kernel diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDiagnostics {
    /// ESS of the proposed weight vector.
    pub ess_last: f64,
    /// Whether the chain moved off the retained slot (`ell* != ell_aux`).
    pub accepted_move: bool,
    /// Largest log importance weight seen this step (Assumption-3 style
    /// boundedness diagnostic; never enforced).
    pub max_log_weight: f64,
}

/// Regrows all slots from the retained vector by the AR(1) noise kernel.
///
/// Slot `ell_aux` is set to `retained`; slots above it follow
/// `xi_k = beta * xi_{k-1} + sqrt(1-beta^2) * fresh_k` upward, slots below it
/// the mirror-image recursion downward. `fresh` holds `K-1` rows in slot
/// order (skipping `ell_aux`).
pub(crate) fn propagate_slots(
    retained: &[f64],
    ell_aux: usize,
    k: usize,
    beta: f64,
    fresh: &[f64],
) -> Vec<f64> {
    let dim = retained.len();
    debug_assert_eq!(fresh.len(), (k - 1) * dim);
    let scale = (1.0 - beta * beta).sqrt();
    let mut out = vec![0.0; k * dim];

    out[ell_aux * dim..(ell_aux + 1) * dim].copy_from_slice(retained);
    let fresh_row = |slot: usize| -> &[f64] {
        let idx = if slot < ell_aux { slot } else { slot - 1 };
        &fresh[idx * dim..(idx + 1) * dim]
    };

    for slot in ell_aux + 1..k {
        let row = fresh_row(slot);
        for d in 0..dim {
            out[slot * dim + d] = beta * out[(slot - 1) * dim + d] + scale * row[d];
        }
    }
    for slot in (0..ell_aux).rev() {
        let row = fresh_row(slot);
        for d in 0..dim {
            out[slot * dim + d] = beta * out[(slot + 1) * dim + d] + scale * row[d];
        }
    }
    out
}

/// Log importance weights of every slot of a flat noise buffer.
pub(crate) fn slot_weights<M: Model, P: Proposal>(
    xis: &[f64],
    dim: usize,
    model: &M,
    proposal: &P,
    x: &[f64],
) -> Result<WeightVector> {
    let k = xis.len() / dim;
    let mut lws = vec![0.0; k];
    for (slot, lw) in lws.iter_mut().enumerate() {
        *lw = log_weight(model, proposal, x, &xis[slot * dim..(slot + 1) * dim])?;
    }
    normalize_log_weights(&lws)
}

/// One DISIR transition.
///
/// Draws the auxiliary slot uniformly, retains the selected noise vector
/// there, regrows the other slots with the AR kernel at `beta`, and resamples
/// the index from the importance weights of the mapped samples. `beta = 0`
/// is the reparameterized ISIR kernel.
pub fn disir_step<M: Model, P: Proposal>(
    state: &AugmentedState,
    beta: f64,
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(AugmentedState, KernelDiagnostics)> {
    debug_assert!((0.0..1.0).contains(&beta));
    let k = state.num_slots();
    let dim = state.dim();

    let ell_aux = rng.uniform_index(k);
    let mut fresh = vec![0.0; (k - 1) * dim];
    rng.fill_standard_normal(&mut fresh);

    let xis_star = propagate_slots(state.selected_xi(), ell_aux, k, beta, &fresh);
    let wv = slot_weights(&xis_star, dim, model, proposal, x)?;
    let u = rng.uniform();
    let ell_star = sample_categorical(wv.normalized(), u);

    let diag = KernelDiagnostics {
        ess_last: wv.ess(),
        accepted_move: ell_star != ell_aux,
        max_log_weight: wv.max_log_weight(),
    };
    Ok((AugmentedState::new(xis_star, dim, ell_star), diag))
}

/// One ISIR transition directly in latent space (no reparameterization).
///
/// Kept as an independent cross-check of the `beta = 0` DISIR reduction; the
/// proposal is sampled directly.
pub fn isir_step_zspace<M: Model, P: Proposal>(
    zs: &[Vec<f64>],
    ell: usize,
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(Vec<Vec<f64>>, usize, KernelDiagnostics)> {
    let k = zs.len();
    assert!(k >= 2 && ell < k);

    let ell_aux = rng.uniform_index(k);
    let mut zs_star: Vec<Vec<f64>> = Vec::with_capacity(k);
    for slot in 0..k {
        if slot == ell_aux {
            zs_star.push(zs[ell].clone());
        } else {
            zs_star.push(proposal.sample_direct(x, rng));
        }
    }

    let mut lws = vec![0.0; k];
    for (slot, lw) in lws.iter_mut().enumerate() {
        *lw = log_weight_z(model, proposal, x, &zs_star[slot])?;
    }
    let wv = normalize_log_weights(&lws)?;
    let u = rng.uniform();
    let ell_star = sample_categorical(wv.normalized(), u);

    let diag = KernelDiagnostics {
        ess_last: wv.ess(),
        accepted_move: ell_star != ell_aux,
        max_log_weight: wv.max_log_weight(),
    };
    Ok((zs_star, ell_star, diag))
}

/// One step of the composed exploration/exploitation kernel: a `beta = 0`
/// DISIR step followed by a `beta = controller.beta` step, after which the
/// controller adapts from the exploitation sub-step's ESS. `beta` only ever
/// changes between composed steps.
pub fn composed_step<M: Model, P: Proposal>(
    state: &AugmentedState,
    controller: &mut BetaController,
    model: &M,
    proposal: &P,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(AugmentedState, KernelDiagnostics)> {
    let (explored, diag0) = disir_step(state, 0.0, model, proposal, x, rng)?;
    let (exploited, diag1) = disir_step(&explored, controller.beta, model, proposal, x, rng)?;
    *controller = update_beta(controller, diag1.ess_last, exploited.num_slots());
    let diag = KernelDiagnostics {
        ess_last: diag1.ess_last,
        accepted_move: diag1.accepted_move,
        max_log_weight: diag0.max_log_weight.max(diag1.max_log_weight),
    };
    Ok((exploited, diag))
}
