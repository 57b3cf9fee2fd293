//! Run configuration: one TOML file shared by every subcommand.
//!
//! ```toml
//! case = "ieee14"
//! seed = 7
//!
//! [scenario]
//! k = 2
//! rho = 0.8
//!
//! [train]
//! epochs = 300
//! ```

use std::path::{Path, PathBuf};

use mfpf_core::mfnn::TrainConfig;
use mfpf_core::rng::derive_seed;
use mfpf_core::scenario::ScenarioConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Contingency scenarios in the timing workload.
    pub bench_scenarios: usize,
    pub bench_reps: usize,
    /// Outages per timing scenario.
    pub bench_k: usize,
    pub sweep_reps: usize,
    pub rho_values: Vec<f64>,
    pub omega_values: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bench_scenarios: 500,
            bench_reps: 5,
            bench_k: 2,
            sweep_reps: 3,
            rho_values: vec![0.1, 0.3, 0.5, 0.8, 1.0],
            omega_values: vec![0.05, 0.1, 0.25, 0.5, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bundled case name or a path to a case file.
    pub case: String,
    pub out: PathBuf,
    /// Master seed. When set it replaces both `scenario.seed` and
    /// `train.seed` (the latter as `derive_seed(seed, 1)`).
    pub seed: Option<u64>,
    /// Worker threads, 0 = one per core.
    pub jobs: usize,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: "ieee14".into(),
            out: PathBuf::from("out"),
            seed: None,
            jobs: 0,
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error(transparent)]
    Scenario(#[from] mfpf_core::scenario::ScenarioError),
    #[error(transparent)]
    Train(#[from] mfpf_core::mfnn::MfnnError),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|source| ConfigError::Toml { path: path.display().to_string(), source })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Applies `seed` to the section seeds and validates both sections.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if let Some(s) = self.seed {
            self.scenario.seed = s;
            self.train.seed = derive_seed(s, 1);
        }
        self.scenario.validate()?;
        self.train.validate()?;
        Ok(self)
    }

    /// TOML cannot hold integers above `i64::MAX`, which derived seeds
    /// often are, so this can fail on a resolved config. Reports echo JSON.
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
