//! Bias/variance benchmark: signed errors of four gradient estimators
//! against the exact PPCA oracle gradient.

use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use disir::coupling::KernelKind;
use disir::estimators::{
    elbo_gradient_theta, iwae_gradient_theta, unbiased_gradient, CapPolicy,
};
use disir::{Model, RngStream};

use crate::config::RunConfig;
use crate::pipelines::data::{build_setup, replicate_stream, validate_model, ARM_BIAS_BASE};
use crate::summary::{box_stats, mean, mean_z_score, variance};
use crate::table::{write_raw_csv, write_summary_json, Metadata, RawRow, Table};
use crate::BenchError;

/// One benchmarked estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Elbo,
    Iwae,
    CIsir,
    CIsirDisir,
}

impl Arm {
    pub fn name(&self) -> &'static str {
        match self {
            Arm::Elbo => "elbo",
            Arm::Iwae => "iwae",
            Arm::CIsir => "c-isir",
            Arm::CIsirDisir => "c-isir-disir",
        }
    }

    fn is_coupled(&self) -> bool {
        matches!(self, Arm::CIsir | Arm::CIsirDisir)
    }
}

pub fn parse_arm(name: &str) -> Option<Arm> {
    match name {
        "elbo" => Some(Arm::Elbo),
        "iwae" => Some(Arm::Iwae),
        "c-isir" => Some(Arm::CIsir),
        "c-isir-disir" => Some(Arm::CIsirDisir),
        _ => None,
    }
}

/// Per-arm raw material: replicate-major error matrix plus run diagnostics.
pub struct ArmResult {
    pub arm: Arm,
    /// `replicates x coords`, row-major by replicate.
    pub errors: Vec<f64>,
    /// Meeting time per replicate (max over the batch); `-1` marks a capped
    /// replicate. Empty for the non-coupled arms.
    pub taus: Vec<i64>,
    pub capped: usize,
    pub total_work: u64,
}

pub struct BiasResult {
    pub arms: Vec<ArmResult>,
    pub coords: usize,
    pub replicates: usize,
    pub oracle: Vec<f64>,
    pub capped_threshold: f64,
    /// Frozen exploitation strength used by the coupled arms.
    pub beta_exploit: f64,
}

impl BiasResult {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    /// Errors of one coordinate in replicate order.
    pub fn coordinate_errors(&self, arm: &ArmResult, coord: usize) -> Vec<f64> {
        (0..self.replicates)
            .map(|r| arm.errors[r * self.coords + coord])
            .collect()
    }

    pub fn capped_fraction(&self, arm: &ArmResult) -> f64 {
        arm.capped as f64 / self.replicates as f64
    }

    /// Worst capped fraction across the coupled arms.
    pub fn worst_capped_fraction(&self) -> f64 {
        self.arms
            .iter()
            .filter(|a| a.arm.is_coupled())
            .map(|a| self.capped_fraction(a))
            .fold(0.0, f64::max)
    }
}

/// Draws `replicates` estimates from each configured arm. Capped coupled
/// runs are accepted with their truncation bias and counted.
pub fn run(config: &RunConfig) -> Result<BiasResult, BenchError> {
    validate_model(&config.model)?;
    let bias_cfg = config
        .bias
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing [bias] section".into()))?;
    let setup = build_setup(config)?;
    let oracle = setup.model.exact_marginal_grad_batch(&setup.data)?;
    let coords = oracle.len();
    let replicates = bias_cfg.replicates;
    let beta_exploit = crate::pipelines::data::calibrate_beta(config, &setup, config.estimator.k)?;

    let mut arms = Vec::new();
    for (arm_idx, name) in bias_cfg.estimators.iter().enumerate() {
        let arm = parse_arm(name)
            .ok_or_else(|| BenchError::Config(format!("unknown estimator `{name}`")))?;
        let stream_arm = ARM_BIAS_BASE + arm_idx as u64;

        let per_replicate: Vec<Result<(Vec<f64>, i64, bool, u64), disir::Error>> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let stream = replicate_stream(config.seed, stream_arm, r as u64);
                draw_one(arm, config, &setup, beta_exploit, &stream).map(
                    |(est, tau, capped, work)| {
                        let errs: Vec<f64> =
                            est.iter().zip(&oracle).map(|(e, o)| e - o).collect();
                        (errs, tau, capped, work)
                    },
                )
            })
            .collect();

        let mut errors = Vec::with_capacity(replicates * coords);
        let mut taus = Vec::new();
        let mut capped = 0usize;
        let mut total_work = 0u64;
        for item in per_replicate {
            let (errs, tau, was_capped, work) = item?;
            errors.extend_from_slice(&errs);
            if arm.is_coupled() {
                taus.push(if was_capped { -1 } else { tau });
            }
            capped += usize::from(was_capped);
            total_work += work;
        }
        arms.push(ArmResult { arm, errors, taus, capped, total_work });
    }

    Ok(BiasResult {
        arms,
        coords,
        replicates,
        oracle,
        capped_threshold: config.estimator.capped_fraction_threshold,
        beta_exploit,
    })
}

fn draw_one(
    arm: Arm,
    config: &RunConfig,
    setup: &crate::pipelines::data::BenchSetup,
    beta_exploit: f64,
    stream: &RngStream,
) -> Result<(Vec<f64>, i64, bool, u64), disir::Error> {
    let k = config.estimator.k;
    match arm {
        Arm::Elbo | Arm::Iwae => {
            let mut sum = vec![0.0; setup.model.theta().len()];
            for (n, x) in setup.data.iter().enumerate() {
                let mut rng = stream.substream(n as u64);
                let g = match arm {
                    Arm::Elbo => elbo_gradient_theta(&setup.model, &setup.proposal, x, &mut rng)?,
                    _ => iwae_gradient_theta(&setup.model, &setup.proposal, x, k, &mut rng)?,
                };
                for (a, b) in sum.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Ok((sum, 0, false, (setup.data.len() * k) as u64))
        }
        Arm::CIsir | Arm::CIsirDisir => {
            let kernel = if arm == Arm::CIsir { KernelKind::CIsir } else { KernelKind::CIsirDisir };
            let mut est_config = config.estimator_config(k, kernel);
            est_config.cap_policy = CapPolicy::AcceptBiased;
            est_config.beta.init = beta_exploit;
            let g = unbiased_gradient(&setup.model, &setup.proposal, &setup.data, &est_config, stream)?;
            Ok((g.value, g.tau as i64, g.capped, g.work as u64))
        }
    }
}

impl Table for BiasResult {
    fn raw_rows(&self) -> Box<dyn Iterator<Item = RawRow> + '_> {
        Box::new(self.arms.iter().flat_map(move |arm| {
            (0..self.replicates).flat_map(move |r| {
                (0..self.coords).map(move |c| RawRow {
                    name: arm.arm.name().to_string(),
                    coordinate: c as i64,
                    replicate: r as i64,
                    value: arm.errors[r * self.coords + c],
                })
            })
        }))
    }

    fn summary(&self) -> serde_json::Value {
        let mut arms_json = serde_json::Map::new();
        for arm in &self.arms {
            let mut coords = Vec::with_capacity(self.coords);
            let mut z_max = 0.0f64;
            for c in 0..self.coords {
                let vals = self.coordinate_errors(arm, c);
                let z = mean_z_score(&vals, 0.0);
                z_max = z_max.max(z.abs());
                let mut sorted = vals.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let bs = box_stats(&sorted);
                coords.push(json!({
                    "coordinate": c,
                    "mean_error": mean(&vals),
                    "variance": variance(&vals),
                    "z": z,
                    "box": bs,
                }));
            }
            let uncapped: Vec<usize> =
                arm.taus.iter().filter(|t| **t >= 0).map(|t| *t as usize).collect();
            let tau_json = if uncapped.is_empty() {
                serde_json::Value::Null
            } else {
                let taus_f: Vec<f64> = uncapped.iter().map(|t| *t as f64).collect();
                let mut sorted = taus_f.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                json!({
                    "mean": mean(&taus_f),
                    "p90": crate::summary::quantile_type7(&sorted, 0.9),
                    "max": sorted[sorted.len() - 1],
                })
            };
            arms_json.insert(
                arm.arm.name().to_string(),
                json!({
                    "replicates": self.replicates,
                    "capped": arm.capped,
                    "capped_fraction": self.capped_fraction(arm),
                    "mean_work": arm.total_work as f64 / self.replicates as f64,
                    "z_max": z_max,
                    "tau": tau_json,
                    "coordinates": coords,
                }),
            );
        }

        // per-coordinate variance ordering between the two coupled arms
        let ordering = match (self.arm(Arm::CIsirDisir), self.arm(Arm::CIsir)) {
            (Some(disir_arm), Some(isir_arm)) => {
                let mut le = 0usize;
                for c in 0..self.coords {
                    let vd = variance(&self.coordinate_errors(disir_arm, c));
                    let vi = variance(&self.coordinate_errors(isir_arm, c));
                    le += usize::from(vd <= vi);
                }
                json!({
                    "coords_le": le,
                    "coords_total": self.coords,
                    "fraction_le": le as f64 / self.coords as f64,
                })
            }
            _ => serde_json::Value::Null,
        };

        json!({
            "coords": self.coords,
            "replicates": self.replicates,
            "beta_exploit": self.beta_exploit,
            "oracle_norm": self.oracle.iter().map(|v| v * v).sum::<f64>().sqrt(),
            "arms": serde_json::Value::Object(arms_json),
            "variance_ordering_disir_le_isir": ordering,
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
    write_raw_csv(&out_dir.join("bias_raw.csv"), meta, &result)?;
    write_summary_json(&out_dir.join("bias_summary.json"), meta, &summary)?;
    let worst = result.worst_capped_fraction();
    if worst > result.capped_threshold {
        return Err(BenchError::CappedBreach { fraction: worst, threshold: result.capped_threshold });
    }
    Ok(summary)
}
