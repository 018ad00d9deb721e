//! Qualitative kernel traces on the 1-D bimodal toy target.

use std::path::Path;

use serde_json::json;

use disir::models::{mean_repeat_run_length, toy_trace, BimodalToy1D, ToyKernel};
use disir::RngStream;

use crate::config::RunConfig;
use crate::pipelines::data::{replicate_stream, ARM_TOY};
use crate::summary::ks_distance;
use crate::table::{fmt_f64, write_csv_rows, write_summary_json, Metadata};
use crate::BenchError;

pub fn parse_kernel(name: &str) -> Option<ToyKernel> {
    match name {
        "isir" => Some(ToyKernel::Isir),
        "isir-disir" => Some(ToyKernel::IsirDisir),
        _ => None,
    }
}

pub struct ToyResult {
    pub rows: Vec<disir::models::TraceRow>,
    pub kernel: ToyKernel,
    pub steps: usize,
}

impl ToyResult {
    /// KS distance of the trace against the analytic mixture CDF; `None`
    /// for an empty trace.
    pub fn ks(&self, target: &BimodalToy1D) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        let mut zs: Vec<f64> = self.rows.iter().map(|r| r.z).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(ks_distance(&zs, |z| target.cdf(z)))
    }

    pub fn mean_repeat(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        let zs: Vec<f64> = self.rows.iter().map(|r| r.z).collect();
        Some(mean_repeat_run_length(&zs))
    }
}

pub fn run(config: &RunConfig) -> Result<ToyResult, BenchError> {
    let toy_cfg = config
        .toy
        .as_ref()
        .ok_or_else(|| BenchError::Config("missing [toy] section".into()))?;
    let kernel = parse_kernel(&toy_cfg.kernel)
        .ok_or_else(|| BenchError::Config(format!("unknown toy kernel `{}`", toy_cfg.kernel)))?;
    let target = BimodalToy1D::default();
    let mut rng: RngStream = replicate_stream(config.seed, ARM_TOY, 0);
    let rows = toy_trace(&target, kernel, toy_cfg.k, toy_cfg.steps, &mut rng)?;
    Ok(ToyResult { rows, kernel, steps: toy_cfg.steps })
}

pub fn run_and_write(
    config: &RunConfig,
    out_dir: &Path,
    meta: &Metadata,
) -> Result<serde_json::Value, BenchError> {
    let result = run(config)?;
    let target = BimodalToy1D::default();
    write_csv_rows(
        &out_dir.join("toy_trace.csv"),
        meta,
        "t,z,beta,ess",
        result.rows.iter().map(|r| {
            format!("{},{},{},{}", r.t, fmt_f64(r.z), fmt_f64(r.beta), fmt_f64(r.ess))
        }),
    )?;
    let summary = json!({
        "kernel": config.toy.as_ref().unwrap().kernel,
        "steps": result.steps,
        "ks_distance": result.ks(&target),
        "mean_repeat_run_length": result.mean_repeat(),
    });
    write_summary_json(&out_dir.join("toy_summary.json"), meta, &summary)?;
    Ok(summary)
}
