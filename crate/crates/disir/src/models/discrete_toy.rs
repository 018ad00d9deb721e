//! Two-atom discrete target with exact transition-law enumeration.
//!
//! The latent space has two atoms at `z = 0.0` and `z = 1.0` with given
//! target and proposal probabilities. The state space is small enough to
//! enumerate every ISIR/DISIR transition outcome exactly, which provides the
//! oracle for the law-equivalence checks between the z-space ISIR kernel and
//! the `beta = 0` noise-space kernel.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{Model, Proposal};
use crate::params::ParamLayout;
use crate::rng::RngStream;
use crate::stats::{norm_cdf, norm_cdf_inv};

/// Two latent atoms with target and proposal probabilities.
#[derive(Debug, Clone)]
pub struct DiscreteToyTarget {
    target: [f64; 2],
    proposal_probs: [f64; 2],
    layout: ParamLayout,
}

/// Atom coordinates in latent space.
pub const ATOMS: [f64; 2] = [0.0, 1.0];

/// Maps a latent point back to its atom index.
pub fn atom_index(z: &[f64]) -> usize {
    usize::from(z[0] > 0.5)
}

impl DiscreteToyTarget {
    pub fn new(target: [f64; 2], proposal_probs: [f64; 2]) -> Self {
        for probs in [&target, &proposal_probs] {
            assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-12);
        }
        DiscreteToyTarget {
            target,
            proposal_probs,
            layout: ParamLayout::new([("empty", 0usize)]),
        }
    }

    pub fn target_probs(&self) -> [f64; 2] {
        self.target
    }

    pub fn proposal(&self) -> DiscreteToyProposal {
        // z = atom 1 iff xi < threshold, with P(N(0,1) < threshold) equal to
        // the proposal mass on atom 1
        DiscreteToyProposal {
            probs: self.proposal_probs,
            threshold: norm_cdf_inv(self.proposal_probs[1]),
            layout: ParamLayout::new([("empty", 0usize)]),
        }
    }

    /// Importance weight of an atom.
    pub fn weight(&self, atom: usize) -> f64 {
        self.target[atom] / self.proposal_probs[atom]
    }
}

impl Model for DiscreteToyTarget {
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
        self.target[atom_index(z)].ln()
    }

    fn grad_theta_log_joint(&self, _x: &[f64], _z: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

/// Probit-reparameterized two-point proposal.
#[derive(Debug, Clone)]
pub struct DiscreteToyProposal {
    probs: [f64; 2],
    threshold: f64,
    layout: ParamLayout,
}

impl Proposal for DiscreteToyProposal {
    fn latent_dim(&self) -> usize {
        1
    }

    fn phi(&self) -> &[f64] {
        &[]
    }

    fn set_phi(&mut self, _phi: &[f64]) {}

    fn phi_layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_density(&self, _x: &[f64], z: &[f64]) -> f64 {
        self.probs[atom_index(z)].ln()
    }

    fn reparam(&self, xi: &[f64], _x: &[f64]) -> Vec<f64> {
        alloc::vec![ATOMS[usize::from(xi[0] < self.threshold)]]
    }

    fn sample_direct(&self, _x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        alloc::vec![ATOMS[usize::from(rng.uniform() < self.probs[1])]]
    }
}

/// Kernel whose transition law is enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnumKernel {
    /// z-space ISIR: fresh slots drawn directly from the proposal.
    IsirZ,
    /// Noise-space DISIR at `beta = 0`, observed through the probit map.
    DisirBeta0,
}

/// Exact transition matrix of the selected-atom chain under the named
/// kernel, by enumerating every auxiliary slot, fresh-slot assignment, and
/// categorical outcome. `K <= 4` keeps the enumeration tiny.
pub fn enumerate_transition_law(
    toy: &DiscreteToyTarget,
    kernel: EnumKernel,
    k: usize,
) -> [[f64; 2]; 2] {
    assert!((2..=4).contains(&k), "enumeration supports K in 2..=4");

    // per-atom probability of a fresh slot
    let fresh_prob: [f64; 2] = match kernel {
        // Alg. 1 line: z_k ~ q directly
        EnumKernel::IsirZ => toy.proposal_probs,
        // beta = 0 noise-space slots are iid N(0, 1) pushed through the
        // probit map; evaluate the pushforward mass from the stored
        // threshold rather than assuming it equals the proposal mass
        EnumKernel::DisirBeta0 => {
            let p1 = norm_cdf(toy.proposal().threshold);
            [1.0 - p1, p1]
        }
    };

    let weights = [toy.weight(0), toy.weight(1)];
    let mut matrix = [[0.0f64; 2]; 2];

    for (current, row) in matrix.iter_mut().enumerate() {
        for ell_aux in 0..k {
            let p_aux = 1.0 / k as f64;
            // enumerate atom assignments of the K-1 fresh slots
            let fresh_slots = k - 1;
            for mask in 0..(1usize << fresh_slots) {
                let mut p_assign = p_aux;
                let mut slot_atoms = [0usize; 4];
                let mut fi = 0;
                for slot in 0..k {
                    if slot == ell_aux {
                        slot_atoms[slot] = current;
                    } else {
                        let atom = (mask >> fi) & 1;
                        slot_atoms[slot] = atom;
                        p_assign *= fresh_prob[atom];
                        fi += 1;
                    }
                }
                let total_w: f64 = (0..k).map(|s| weights[slot_atoms[s]]).sum();
                for slot in 0..k {
                    let p_pick = weights[slot_atoms[slot]] / total_w;
                    row[slot_atoms[slot]] += p_assign * p_pick;
                }
            }
        }
    }
    matrix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{disir_step, isir_step_zspace, AugmentedState};

    #[test]
    fn perfect_proposal_retains_with_probability_one_over_k() {
        // with proposal == target all weights are equal, so the selected
        // sample is uniform over the K slots: the old sample with
        // probability 1/K, a fresh target draw otherwise
        let toy = DiscreteToyTarget::new([0.7, 0.3], [0.7, 0.3]);
        let k = 3;
        for kernel in [EnumKernel::IsirZ, EnumKernel::DisirBeta0] {
            let m = enumerate_transition_law(&toy, kernel, k);
            for (a, row) in m.iter().enumerate() {
                for (b, p) in row.iter().enumerate() {
                    let keep = if a == b { 1.0 / k as f64 } else { 0.0 };
                    let expect = keep + (1.0 - 1.0 / k as f64) * toy.target_probs()[b];
                    assert!((p - expect).abs() < 1e-12, "({a},{b})");
                }
            }
            // the target is stationary
            let pi = toy.target_probs();
            let next0 = pi[0] * m[0][0] + pi[1] * m[1][0];
            assert!((next0 - pi[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let toy = DiscreteToyTarget::new([0.8, 0.2], [0.4, 0.6]);
        for k in 2..=4 {
            let m = enumerate_transition_law(&toy, EnumKernel::IsirZ, k);
            for row in m {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_enumerated_k2_case() {
        // target (0.8, 0.2), proposal (0.5, 0.5), K = 2. Weights w0 = 1.6,
        // w1 = 0.4. From atom 0: fresh slot atom 0 w.p. 1/2 -> stay; fresh
        // atom 1 -> move w.p. 0.4/2.0 = 0.2. Row: (0.9, 0.1). From atom 1:
        // fresh atom 0 -> move to 0 w.p. 1.6/2.0 = 0.8; fresh atom 1 ->
        // stay. Row: (0.4, 0.6).
        let toy = DiscreteToyTarget::new([0.8, 0.2], [0.5, 0.5]);
        let m = enumerate_transition_law(&toy, EnumKernel::IsirZ, 2);
        assert!((m[0][0] - 0.9).abs() < 1e-12);
        assert!((m[0][1] - 0.1).abs() < 1e-12);
        assert!((m[1][0] - 0.4).abs() < 1e-12);
        assert!((m[1][1] - 0.6).abs() < 1e-12);

        // stationarity sanity check: the target is invariant
        let pi = toy.target_probs();
        let next0 = pi[0] * m[0][0] + pi[1] * m[1][0];
        assert!((next0 - pi[0]).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_enumeration_matches_zspace_enumeration() {
        // Lemma-1 content at the law level, K in {2, 3}
        let toy = DiscreteToyTarget::new([0.8, 0.2], [0.35, 0.65]);
        for k in [2, 3] {
            let a = enumerate_transition_law(&toy, EnumKernel::IsirZ, k);
            let b = enumerate_transition_law(&toy, EnumKernel::DisirBeta0, k);
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (a[i][j] - b[i][j]).abs() < 1e-12,
                        "K={k} ({i},{j}): {} vs {}",
                        a[i][j],
                        b[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_zspace_kernel_matches_enumeration() {
        let toy = DiscreteToyTarget::new([0.8, 0.2], [0.5, 0.5]);
        let proposal = toy.proposal();
        let expect = enumerate_transition_law(&toy, EnumKernel::IsirZ, 2);
        let mut rng = RngStream::new(61, 0);

        let n = 100_000;
        for start in 0..2 {
            let zs = alloc::vec![alloc::vec![ATOMS[start]], alloc::vec![ATOMS[start]]];
            let mut moved = 0usize;
            for _ in 0..n {
                let (zs_star, ell_star, _) =
                    isir_step_zspace(&zs, 0, &toy, &proposal, &[], &mut rng).unwrap();
                if atom_index(&zs_star[ell_star]) == 1 {
                    moved += 1;
                }
            }
            let freq = moved as f64 / n as f64;
            let p = expect[start][1];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "start {start}: {freq} vs {p}");
        }
    }

    #[test]
    fn empirical_beta_zero_kernel_matches_enumeration() {
        let toy = DiscreteToyTarget::new([0.8, 0.2], [0.5, 0.5]);
        let proposal = toy.proposal();
        let expect = enumerate_transition_law(&toy, EnumKernel::DisirBeta0, 3);
        let mut rng = RngStream::new(62, 0);

        let n = 100_000;
        for start in 0..2 {
            // selected slot holds noise mapping to the start atom
            let xi0 = if start == 1 {
                proposal.threshold - 0.5
            } else {
                proposal.threshold + 0.5
            };
            let state = AugmentedState::new(alloc::vec![xi0, 0.3, -0.2], 1, 0);
            assert_eq!(atom_index(&proposal.reparam(state.selected_xi(), &[])), start);
            let mut moved = 0usize;
            for _ in 0..n {
                let (next, _) = disir_step(&state, 0.0, &toy, &proposal, &[], &mut rng).unwrap();
                if atom_index(&proposal.reparam(next.selected_xi(), &[])) == 1 {
                    moved += 1;
                }
            }
            let freq = moved as f64 / n as f64;
            let p = expect[start][1];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "start {start}: {freq} vs {p}");
        }
    }
}
