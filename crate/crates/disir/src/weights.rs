//! Importance-weight arithmetic: log weights, stable normalization, ESS.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::{Model, Proposal};

/// Normalized importance weights, kept together with their log-space source.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    log_weights: Vec<f64>,
    normalized: Vec<f64>,
    log_sum_exp: f64,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Probabilities proportional to `exp(log_weights)`, summing to one.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// `log sum_k exp(log_weights[k])`; the log mean unnormalized weight is
    /// `log_sum_exp() - ln(K)`.
    pub fn log_sum_exp(&self) -> f64 {
        self.log_sum_exp
    }

    pub fn max_log_weight(&self) -> f64 {
        self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Effective sample size `1 / sum_k w~_k^2`, in `[1, K]`.
    pub fn ess(&self) -> f64 {
        1.0 / self.normalized.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Log importance weight `log p_theta(x, z) - log q_phi(z | x)` at
/// `z = g_phi(xi, x)`.
///
/// A non-finite result signals a support violation and aborts the enclosing
/// kernel step.
pub fn log_weight<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    xi: &[f64],
) -> Result<f64> {
    let z = proposal.reparam(xi, x);
    log_weight_z(model, proposal, x, &z)
}

/// Log importance weight evaluated directly at a latent point `z`.
pub fn log_weight_z<M: Model, P: Proposal>(
    model: &M,
    proposal: &P,
    x: &[f64],
    z: &[f64],
) -> Result<f64> {
    let lw = model.log_joint(x, z) - proposal.log_density(x, z);
    if lw.is_finite() {
        Ok(lw)
    } else {
        Err(Error::SupportViolation { log_weight: lw })
    }
}

/// Normalizes log weights through a max-subtracted softmax.
///
/// Entries of `-inf` are allowed (zero weight); NaN or `+inf` entries, or an
/// all-`-inf` vector, are degenerate.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<WeightVector> {
    if log_weights.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    let mut max = f64::NEG_INFINITY;
    for &lw in log_weights {
        if lw.is_nan() || lw == f64::INFINITY {
            return Err(Error::DegenerateWeights);
        }
        if lw > max {
            max = lw;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }

    let mut normalized = vec![0.0; log_weights.len()];
    let mut sum = 0.0;
    for (n, &lw) in normalized.iter_mut().zip(log_weights) {
        let e = (lw - max).exp();
        *n = e;
        sum += e;
    }
    for n in normalized.iter_mut() {
        *n /= sum;
    }
    Ok(WeightVector {
        log_weights: log_weights.to_vec(),
        normalized,
        log_sum_exp: max + sum.ln(),
    })
}

/// Inverse-CDF categorical draw from normalized probabilities with a single
/// uniform; ties break to the lowest index.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    debug_assert!(!probs.is_empty());
    let mut cum = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    // rounding left cum slightly below 1; take the last positive entry
    for (k, &p) in probs.iter().enumerate().rev() {
        if p > 0.0 {
            return k;
        }
    }
    probs.len() - 1
}
