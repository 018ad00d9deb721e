//! Statistical law checks that cut across kernels, coupling, and models:
//! stationarity of single DISIR steps started at the exact augmented target,
//! marginal-law equivalence of the coupled kernel, and the meeting-time
//! behaviour of the coupled runner.

use disir::coupling::{cdisir_step, run_coupled_chains, CoupledState, KernelKind};
use disir::estimators::{CapPolicy, EstimatorConfig};
use disir::kernels::disir_step;
use disir::models::{LinearGaussianProposal, PpcaModel};
use disir::{Proposal, RngStream};

fn moment_check(
    label: &str,
    samples: &[Vec<f64>],
    expect_mean: &[f64],
    expect_cov: &[f64],
) {
    let n = samples.len() as f64;
    let d = expect_mean.len();
    let mut mean = vec![0.0; d];
    for z in samples {
        for i in 0..d {
            mean[i] += z[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    for i in 0..d {
        let se = (expect_cov[i * d + i] / n).sqrt();
        assert!(
            (mean[i] - expect_mean[i]).abs() < 4.0 * se,
            "{label}: mean[{i}] {} vs {} (se {se})",
            mean[i],
            expect_mean[i]
        );
    }
    for i in 0..d {
        for j in 0..d {
            let mut cov = 0.0;
            for z in samples {
                cov += (z[i] - mean[i]) * (z[j] - mean[j]);
            }
            cov /= n - 1.0;
            // Gaussian sampling variance of a covariance entry
            let se = ((expect_cov[i * d + i] * expect_cov[j * d + j]
                + expect_cov[i * d + j] * expect_cov[i * d + j])
                / n)
                .sqrt();
            assert!(
                (cov - expect_cov[i * d + j]).abs() < 4.0 * se,
                "{label}: cov[{i}{j}] {cov} vs {}",
                expect_cov[i * d + j]
            );
        }
    }
}

/// Exact-posterior-initialized single DISIR steps preserve the posterior
/// moments of the selected mapped sample at every beta.
#[test]
fn disir_step_preserves_exact_augmented_target() {
    let mut rng = RngStream::new(201, 0);
    let model = PpcaModel::random_instance(2, 3, &mut rng);
    let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
    let mut x = vec![0.0; 3];
    rng.fill_standard_normal(&mut x);
    let post = model.exact_posterior(&x).unwrap();

    let k = 8;
    let replicates = 100_000;
    for (bi, beta) in [0.0, 0.5, 0.9].into_iter().enumerate() {
        let mut samples = Vec::with_capacity(replicates);
        let mut step_rng = RngStream::new(202, bi as u64);
        for _ in 0..replicates {
            let state = model
                .sample_exact_augmented(&proposal, &x, k, beta, &mut step_rng)
                .unwrap();
            let (next, _) = disir_step(&state, beta, &model, &proposal, &x, &mut step_rng).unwrap();
            samples.push(proposal.reparam(next.selected_xi(), &x));
        }
        moment_check(&format!("beta={beta}"), &samples, &post.mean, &post.cov);
    }
}

/// The z-space ISIR kernel preserves the posterior moments too (same
/// stationarity check through the direct-sampling path).
#[test]
fn isir_zspace_preserves_posterior_moments() {
    use disir::kernels::isir_step_zspace;
    let mut rng = RngStream::new(203, 0);
    let model = PpcaModel::random_instance(2, 3, &mut rng);
    let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
    let mut x = vec![0.0; 3];
    rng.fill_standard_normal(&mut x);
    let post = model.exact_posterior(&x).unwrap();

    let k = 8;
    let replicates = 100_000;
    let mut samples = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        // stationary init: slot ell holds an exact posterior draw, the rest
        // are proposal draws (the beta = 0 augmented target in z space)
        let ell = rng.uniform_index(k);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(k);
        for slot in 0..k {
            if slot == ell {
                zs.push(post.sample(&mut rng));
            } else {
                zs.push(proposal.sample_direct(&x, &mut rng));
            }
        }
        let (zs_star, ell_star, _) =
            isir_step_zspace(&zs, ell, &model, &proposal, &x, &mut rng).unwrap();
        samples.push(zs_star[ell_star].clone());
    }
    moment_check("isir-z", &samples, &post.mean, &post.cov);
}

/// Ignoring chain B, a C-DISIR step has the same law as a DISIR step: the
/// selected-sample moments agree across the two paths when both start from
/// the same stationary initialization.
#[test]
fn cdisir_marginal_law_matches_disir() {
    let mut rng = RngStream::new(204, 0);
    let model = PpcaModel::random_instance(2, 3, &mut rng);
    let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
    let mut x = vec![0.0; 3];
    rng.fill_standard_normal(&mut x);
    let post = model.exact_posterior(&x).unwrap();

    let k = 6;
    let beta = 0.5;
    let replicates = 100_000;

    let mut coupled_samples = Vec::with_capacity(replicates);
    let mut marginal_samples = Vec::with_capacity(replicates);
    let mut rng_c = RngStream::new(205, 0);
    let mut rng_m = RngStream::new(205, 1);
    for _ in 0..replicates {
        let a = model
            .sample_exact_augmented(&proposal, &x, k, beta, &mut rng_c)
            .unwrap();
        let b = disir::AugmentedState::init_standard(k, 2, &mut rng_c);
        let pair = CoupledState::new(a, b);
        let (next, _) = cdisir_step(&pair, beta, &model, &proposal, &x, &mut rng_c).unwrap();
        coupled_samples.push(proposal.reparam(next.chain_a.selected_xi(), &x));

        let a2 = model
            .sample_exact_augmented(&proposal, &x, k, beta, &mut rng_m)
            .unwrap();
        let (next2, _) = disir_step(&a2, beta, &model, &proposal, &x, &mut rng_m).unwrap();
        marginal_samples.push(proposal.reparam(next2.selected_xi(), &x));
    }
    // both paths must preserve the posterior moments
    moment_check("cdisir side", &coupled_samples, &post.mean, &post.cov);
    moment_check("disir ref", &marginal_samples, &post.mean, &post.cov);
}

/// Meeting times fall with K and the coupled runner stays under its cap on
/// a desk-scale PPCA target.
#[test]
fn meeting_time_decreases_with_k() {
    let mut rng = RngStream::new(206, 0);
    let model = PpcaModel::random_instance(4, 8, &mut rng);
    let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
    let mut x = vec![0.0; 8];
    rng.fill_standard_normal(&mut x);

    let replicates = 1500;
    let mut means = Vec::new();
    let mut ses = Vec::new();
    for k in [5usize, 10, 20] {
        let mut config = EstimatorConfig::new(k);
        config.cap_policy = CapPolicy::HardError;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..replicates {
            let mut run_rng = RngStream::new(207, (k * 100_000 + rep) as u64);
            let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut run_rng).unwrap();
            assert!(!traj.capped());
            sum += traj.tau() as f64;
            sumsq += (traj.tau() as f64) * (traj.tau() as f64);
        }
        let mean = sum / replicates as f64;
        let var = sumsq / replicates as f64 - mean * mean;
        means.push(mean);
        ses.push((var / replicates as f64).sqrt());
    }
    // non-increasing within 2 standard errors per adjacent pair
    for w in 0..2 {
        let slack = 2.0 * (ses[w] * ses[w] + ses[w + 1] * ses[w + 1]).sqrt();
        assert!(
            means[w + 1] <= means[w] + slack,
            "mean tau increased: {:?} (se {:?})",
            means,
            ses
        );
    }
}

/// Faithfulness at the trajectory level: once a run has met, replaying it
/// longer keeps the lagged pair glued (checked inside the runner) and the
/// composed kernel with kind CIsir couples too.
#[test]
fn cisir_kernel_meets_and_is_uncapped_at_desk_scale() {
    let mut rng = RngStream::new(208, 0);
    let model = PpcaModel::random_instance(3, 6, &mut rng);
    let proposal = LinearGaussianProposal::matched_to_posterior(&model).unwrap();
    let mut x = vec![0.0; 6];
    rng.fill_standard_normal(&mut x);

    let mut config = EstimatorConfig::new(8);
    config.kernel = KernelKind::CIsir;
    config.cap_policy = CapPolicy::HardError;
    for rep in 0..200 {
        let mut run_rng = RngStream::new(209, rep);
        let traj = run_coupled_chains(&model, &proposal, &x, &config, &mut run_rng).unwrap();
        assert!(!traj.capped());
        assert!(traj.tau() >= traj.lag());
    }
}
