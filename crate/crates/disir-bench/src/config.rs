//! Benchmark configuration: a single TOML document with per-command
//! sections, environment-variable overrides, and a content hash carried into
//! every output file.
//!
//! Unknown keys anywhere in the document are errors; silent typos in
//! experiment configs are the main reproducibility hazard.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::BenchError;

/// Environment prefix for config overrides; nested keys join with `__`,
/// e.g. `DISIR_BENCH_BIAS__REPLICATES=200`.
pub const ENV_PREFIX: &str = "DISIR_BENCH_";

fn default_threads() -> usize {
    0
}

fn default_out_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides.
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Worker threads; 0 means all available cores. Results are identical
    /// at any thread count.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub proposal_fit: ProposalFitConfig,
    pub bias: Option<BiasConfig>,
    pub meeting: Option<MeetingConfig>,
    pub toy: Option<ToyConfig>,
    pub fit: Option<FitConfig>,
}

/// PPCA benchmark instance dimensions and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dz: usize,
    pub dx: usize,
    pub n_data: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dz: 10, dx: 20, n_data: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub k: usize,
    pub lag: usize,
    pub t0: usize,
    pub max_iterations: usize,
    pub beta_init: f64,
    pub beta_target_fraction: f64,
    pub beta_step_size: f64,
    /// Marginal pilot-chain length used to calibrate the frozen
    /// exploitation beta before coupled runs.
    #[serde(default = "default_beta_pilot_steps")]
    pub beta_pilot_steps: usize,
    /// Fraction of capped coupled runs above which a command exits with the
    /// distinct capped-breach code.
    pub capped_fraction_threshold: f64,
}

fn default_beta_pilot_steps() -> usize {
    400
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            k: 10,
            lag: 10,
            t0: 1,
            max_iterations: 1000,
            beta_init: 0.5,
            beta_target_fraction: 0.3,
            beta_step_size: 0.01,
            beta_pilot_steps: default_beta_pilot_steps(),
            capped_fraction_threshold: 0.01,
        }
    }
}

/// IWAE-bound proposal fitting ahead of the benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalFitConfig {
    pub iters: usize,
    pub k: usize,
    pub lr: f64,
    /// Harmonic learning-rate decay scale (iterations); 0 disables decay.
    #[serde(default = "default_fit_decay")]
    pub lr_decay_iters: f64,
}

fn default_fit_decay() -> f64 {
    200.0
}

impl Default for ProposalFitConfig {
    fn default() -> Self {
        ProposalFitConfig { iters: 2000, k: 100, lr: 0.02, lr_decay_iters: default_fit_decay() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub replicates: usize,
    pub estimators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeetingConfig {
    pub replicates: usize,
    pub ks: Vec<usize>,
    /// Which datapoint of the generated batch the chains target.
    #[serde(default)]
    pub datapoint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    /// `isir` or `isir-disir`.
    pub kernel: String,
    pub k: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub dz: usize,
    pub dx: usize,
    pub n_data: usize,
    pub k: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    /// Importance samples for the proposal-fitting gradient.
    pub phi_k: usize,
    /// Harmonic learning-rate decay scale (epochs); 0 disables decay.
    pub lr_decay_epochs: f64,
    /// Gradient replication growth: each theta step averages
    /// `1 + floor(epoch / replication_epochs)` independent draws, so the
    /// stochastic equilibrium keeps descending and the training curve stays
    /// monotone at window scale. 0 disables growth.
    #[serde(default = "default_replication_epochs")]
    pub replication_epochs: f64,
}

fn default_replication_epochs() -> f64 {
    50.0
}

impl RunConfig {
    /// Loads a config file, then applies `DISIR_BENCH_*` environment
    /// overrides.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: toml::Table = toml::from_str(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;

        let mut overrides: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            apply_env_override(&mut value, &key, &raw)?;
        }

        let config: RunConfig = RunConfig::from_table(value)?;
        config.validate()?;
        Ok(config)
    }

    fn from_table(value: toml::Table) -> Result<Self, BenchError> {
        toml::Value::Table(value)
            .try_into()
            .map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let est = &self.estimator;
        if est.k < 2 {
            return Err(BenchError::Config("estimator.k must be >= 2".into()));
        }
        if est.lag < 1 {
            return Err(BenchError::Config("estimator.lag must be >= 1".into()));
        }
        if est.max_iterations < est.t0 + est.lag {
            return Err(BenchError::Config(
                "estimator.max_iterations must cover t0 + lag".into(),
            ));
        }
        if let Some(bias) = &self.bias {
            for name in &bias.estimators {
                crate::pipelines::bias::parse_arm(name)
                    .ok_or_else(|| BenchError::Config(format!("unknown estimator `{name}`")))?;
            }
            if bias.replicates == 0 {
                return Err(BenchError::Config("bias.replicates must be positive".into()));
            }
        }
        if let Some(meeting) = &self.meeting {
            if meeting.ks.iter().any(|k| *k < 2) {
                return Err(BenchError::Config("meeting.ks entries must be >= 2".into()));
            }
            if meeting.datapoint >= self.model.n_data {
                return Err(BenchError::Config("meeting.datapoint out of range".into()));
            }
        }
        if let Some(toy) = &self.toy {
            if crate::pipelines::toy::parse_kernel(&toy.kernel).is_none() {
                return Err(BenchError::Config(format!("unknown toy kernel `{}`", toy.kernel)));
            }
            if toy.k < 2 {
                return Err(BenchError::Config("toy.k must be >= 2".into()));
            }
        }
        if let Some(fit) = &self.fit {
            if fit.minibatch == 0 || fit.minibatch > fit.n_data {
                return Err(BenchError::Config("fit.minibatch must be in 1..=n_data".into()));
            }
            if fit.k < 2 {
                return Err(BenchError::Config("fit.k must be >= 2".into()));
            }
        }
        Ok(())
    }

    /// Canonical serialized form; feeds the config hash and the round-trip
    /// guarantee.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex-encoded.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The coupled-estimator configuration shared by the pipelines.
    pub fn estimator_config(&self, k: usize, kernel: disir::coupling::KernelKind) -> disir::estimators::EstimatorConfig {
        let mut config = disir::estimators::EstimatorConfig::new(k);
        config.lag = self.estimator.lag;
        config.t0 = self.estimator.t0;
        config.max_iterations = self.estimator.max_iterations;
        config.beta.init = self.estimator.beta_init;
        config.beta.target_fraction = self.estimator.beta_target_fraction;
        config.beta.step_size = self.estimator.beta_step_size;
        config.kernel = kernel;
        config.seed = self.seed;
        config
    }
}

fn apply_env_override(
    table: &mut toml::Table,
    env_key: &str,
    raw: &str,
) -> Result<(), BenchError> {
    let path = env_key.trim_start_matches(ENV_PREFIX).to_lowercase();
    let parts: Vec<&str> = path.split("__").collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(BenchError::Config(format!("malformed override variable {env_key}")));
    }

    // parse the value as a TOML fragment, falling back to a plain string
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| {
            BenchError::Config(format!("override {env_key} traverses a non-table key"))
        })?;
    }
    current.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
