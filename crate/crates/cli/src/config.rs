//! The run configuration: one JSON document with a default for every field.

use std::path::{Path, PathBuf};

use rcq_core::agent::TrainConfig;
use rcq_core::baselines::{BondClassifierConfig, DEFAULT_BITS, DEFAULT_MATCH_BOUND, DEFAULT_RADIUS};
use rcq_core::encoder::EncoderConfig;
use rcq_core::evalkit::GeneratorConfig;
use rcq_core::molgraph::hash::splitmix64;
use rcq_tensor::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    #[default]
    Sim,
    BondClassifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Repeats of the randomized similarity baseline.
    pub repeats: usize,
    pub radius: usize,
    pub nbits: usize,
    pub match_bound: usize,
    pub classifier: BondClassifierConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            method: BaselineMethod::Sim,
            repeats: 20,
            radius: DEFAULT_RADIUS,
            nbits: DEFAULT_BITS,
            match_bound: DEFAULT_MATCH_BOUND,
            classifier: BondClassifierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub graphs: usize,
    pub max_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            graphs: 100,
            max_nodes: 10,
        }
    }
}

/// Default locations; command-line flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; every component seed is derived from it.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub adam: AdamConfig,
    /// `generator.seed` is overwritten by the value derived from `seed`.
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    /// Beam width for `predict`.
    pub beam: usize,
    pub baseline: BaselineConfig,
    pub oracle: OracleConfig,
    pub workers: usize,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            adam: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            split: SplitConfig::default(),
            beam: 4,
            baseline: BaselineConfig::default(),
            oracle: OracleConfig::default(),
            workers: 1,
            paths: PathsConfig::default(),
        };
        cfg.derive_seeds();
        cfg
    }
}

/// Per-component seed streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Generator = 1,
    Split = 2,
    Train = 3,
    Baseline = 4,
    Oracle = 5,
}

impl RunConfig {
    /// `splitmix64(seed ^ splitmix64(component))`.
    pub fn seed_for(&self, c: Component) -> u64 {
        splitmix64(self.seed ^ splitmix64(c as u64))
    }

    pub fn derive_seeds(&mut self) {
        self.generator.seed = self.seed_for(Component::Generator);
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Validation(format!("config {}: {e}", p.display()))
                })?
            }
        };
        cfg.derive_seeds();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: &dyn std::fmt::Display| CliError::Validation(e.to_string());
        self.encoder.validate().map_err(|e| v(&e))?;
        self.train.validate().map_err(|e| v(&e))?;
        self.adam.validate().map_err(|e| v(&e))?;
        self.generator.validate().map_err(|e| v(&e))?;
        self.baseline.classifier.validate().map_err(|e| v(&e))?;
        let s = &self.split;
        if [s.train, s.val, s.test].iter().any(|r| !(*r >= 0.0)) || (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(CliError::Validation(format!(
                "split ratios must be non-negative and sum to 1, got {} / {} / {}",
                s.train, s.val, s.test
            )));
        }
        if self.beam == 0 {
            return Err(CliError::Validation("beam must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Validation("workers must be >= 1".into()));
        }
        if self.baseline.repeats == 0 || self.baseline.nbits == 0 {
            return Err(CliError::Validation("baseline repeats and nbits must be >= 1".into()));
        }
        Ok(())
    }

    /// Writes the resolved configuration as `config.json` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        crate::write_file(&dir.join("config.json"), &text)
    }
}
