//! Experiment configuration.
//!
//! Configs are TOML files with every field optional; omitted keys take the
//! documented defaults and unknown keys are rejected. The effective
//! (defaulted) config is echoed beside experiment outputs and re-parses to
//! an identical value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::RegressorSpec;
use crate::selectors;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Single root seed; every module stream derives from it.
    pub seed: u64,
    pub env: EnvConfig,
    pub split: SplitConfig,
    pub candidates: CandidatesConfig,
    pub sbv: SbvConfig,
    pub wis: WisConfig,
    pub fqe: FqeConfig,
    pub eval: EvalConfig,
    pub selectors: SelectorsConfig,
    pub sweep: SweepConfig,
    pub sensitivity: SensitivityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub phi: f64,
    pub num_trajectories: usize,
    pub horizon: usize,
    pub gamma_train: f64,
    pub gamma_eval: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { phi: 0.25, num_trajectories: 25, horizon: 25, gamma_train: 0.9, gamma_eval: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidatesConfig {
    /// Polynomial FQI grid: every (degree, lambda) combination.
    pub degrees: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub fqi_iterations: usize,
    pub include_q_star: bool,
    pub include_zero: bool,
    /// Degrees of direct Bellman-residual fits to add (empty = none).
    pub min_emsbe_degrees: Vec<usize>,
    pub q_star_rollouts: usize,
    pub q_star_horizon: usize,
}

impl Default for CandidatesConfig {
    fn default() -> Self {
        Self {
            degrees: vec![1, 2, 3],
            lambdas: vec![0.0, 0.003, 0.01, 0.1, 1.0, 10.0, 100.0],
            fqi_iterations: 50,
            include_q_star: true,
            include_zero: true,
            min_emsbe_degrees: vec![],
            q_star_rollouts: 10_000,
            q_star_horizon: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbvConfig {
    pub degrees: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// "same_train" or "separate_half".
    pub backup_data: String,
    pub backup_split_seed: u64,
}

impl Default for SbvConfig {
    fn default() -> Self {
        Self {
            degrees: vec![1, 2, 3],
            lambdas: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            backup_data: "same_train".into(),
            backup_split_seed: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WisConfig {
    pub horizon: usize,
}

impl Default for WisConfig {
    fn default() -> Self {
        Self { horizon: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FqeConfig {
    /// "poly_ridge" or "forest".
    pub kind: String,
    pub degree: usize,
    pub lambda: f64,
    pub num_trees: usize,
    pub n_min: usize,
    pub m_try: usize,
    pub forest_seed: u64,
    pub iterations: usize,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            kind: "poly_ridge".into(),
            degree: 2,
            lambda: 0.1,
            num_trees: 25,
            n_min: 5,
            m_try: 2,
            forest_seed: 17,
            iterations: 50,
        }
    }
}

impl FqeConfig {
    pub fn regressor(&self) -> Result<RegressorSpec, ConfigError> {
        match self.kind.as_str() {
            "poly_ridge" => {
                Ok(RegressorSpec::PolyRidge { degree: self.degree, lambda: self.lambda })
            }
            "forest" => Ok(RegressorSpec::Forest {
                num_trees: self.num_trees,
                min_leaf: self.n_min,
                m_try: self.m_try,
                seed: self.forest_seed,
            }),
            other => Err(ConfigError::Invalid(format!("unknown fqe regressor kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 1000, horizon: 100, top_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorsConfig {
    pub methods: Vec<String>,
}

impl Default for SelectorsConfig {
    fn default() -> Self {
        Self { methods: vec!["sbv".into(), "emsbe".into(), "wis".into(), "fqe".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub phis: Vec<f64>,
    pub num_seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { phis: vec![0.0, 0.05, 0.10, 0.15, 0.20, 0.25], num_seeds: 10 }
    }
}

/// Two distinguishable candidate families plus matching FQE backends for
/// the backend-sensitivity experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    pub poly_degrees: Vec<usize>,
    pub poly_lambdas: Vec<f64>,
    pub forest_n_min: Vec<usize>,
    pub forest_m_try: Vec<usize>,
    /// Trees per candidate-family forest; few trees give the family a
    /// distinctly rougher character.
    pub forest_trees: usize,
    pub fqe_poly_degree: usize,
    pub fqe_poly_lambda: f64,
    pub fqe_forest_trees: usize,
    pub fqe_forest_n_min: usize,
    pub fqe_forest_m_try: usize,
    pub num_seeds: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            poly_degrees: vec![1, 2, 3],
            poly_lambdas: vec![0.0, 0.01],
            forest_n_min: vec![1, 25],
            forest_m_try: vec![2, 4],
            forest_trees: 25,
            fqe_poly_degree: 3,
            fqe_poly_lambda: 0.0,
            fqe_forest_trees: 25,
            fqe_forest_n_min: 1,
            fqe_forest_m_try: 1,
            num_seeds: 10,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            env: EnvConfig::default(),
            split: SplitConfig::default(),
            candidates: CandidatesConfig::default(),
            sbv: SbvConfig::default(),
            wis: WisConfig::default(),
            fqe: FqeConfig::default(),
            eval: EvalConfig::default(),
            selectors: SelectorsConfig::default(),
            sweep: SweepConfig::default(),
            sensitivity: SensitivityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if !(0.0..=0.25).contains(&self.env.phi) {
            errors.push(format!("env.phi must lie in [0, 0.25], got {}", self.env.phi));
        }
        if self.env.num_trajectories < 2 {
            errors.push("env.num_trajectories must be >= 2".into());
        }
        if self.env.horizon == 0 {
            errors.push("env.horizon must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.env.gamma_train) {
            errors.push(format!("env.gamma_train must lie in [0,1), got {}", self.env.gamma_train));
        }
        if !(0.0..=1.0).contains(&self.env.gamma_eval) {
            errors.push(format!("env.gamma_eval must lie in [0,1], got {}", self.env.gamma_eval));
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            errors.push(format!(
                "split.train_fraction must lie strictly inside (0,1), got {}",
                self.split.train_fraction
            ));
        }
        if self.candidates.degrees.is_empty() || self.candidates.lambdas.is_empty() {
            errors.push("candidates grid must be nonempty".into());
        }
        if self.candidates.fqi_iterations == 0 {
            errors.push("candidates.fqi_iterations must be >= 1".into());
        }
        if self.sbv.degrees.is_empty() || self.sbv.lambdas.is_empty() {
            errors.push("sbv grid must be nonempty".into());
        }
        if !matches!(self.sbv.backup_data.as_str(), "same_train" | "separate_half") {
            errors.push(format!(
                "sbv.backup_data must be 'same_train' or 'separate_half', got '{}'",
                self.sbv.backup_data
            ));
        }
        if self.eval.episodes < 2 {
            errors.push("eval.episodes must be >= 2".into());
        }
        if self.eval.top_k == 0 {
            errors.push("eval.top_k must be >= 1".into());
        }
        for m in &self.selectors.methods {
            if selectors::by_name(m).is_err() {
                errors.push(format!("unknown selector '{m}'"));
            }
        }
        if self.sweep.phis.iter().any(|p| !(0.0..=0.25).contains(p)) {
            errors.push("sweep.phis must lie in [0, 0.25]".into());
        }
        if self.sweep.num_seeds == 0 || self.sensitivity.num_seeds == 0 {
            errors.push("seed counts must be >= 1".into());
        }
        if let Err(e) = self.fqe.regressor() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors.join("; ")))
        }
    }

    /// The SBV regression grid: every (degree, lambda) combination.
    pub fn sbv_specs(&self) -> Vec<RegressorSpec> {
        let mut specs = Vec::new();
        for &degree in &self.sbv.degrees {
            for &lambda in &self.sbv.lambdas {
                specs.push(RegressorSpec::PolyRidge { degree, lambda });
            }
        }
        specs
    }

    pub fn backup_data(&self) -> crate::selectors::BackupData {
        match self.sbv.backup_data.as_str() {
            "separate_half" => {
                crate::selectors::BackupData::SeparateHalf { seed: self.sbv.backup_split_seed }
            }
            _ => crate::selectors::BackupData::SameTrain,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the effective config next to experiment outputs.
pub fn write_effective_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ConfigError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective-config.toml"), cfg.to_toml())?;
    Ok(())
}
