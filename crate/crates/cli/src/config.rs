//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use offrl::approx::Architecture;
use offrl::envgen::{
    build_chronic_care, build_critical_care, ChronicCareConfig, CriticalCareConfig, Environment,
};
use offrl::learners::OptimizerKind;
use offrl::ope::{BehaviorFitOptions, DEFAULT_C_GRID, DEFAULT_EPSILON};
use offrl::sampling::SamplingMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Grid cells trained concurrently.
    pub workers: usize,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub train: TrainSettings,
    pub grid: GridConfig,
    pub eval: EvalConfig,
    pub check: CheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "chronic-care".into(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/chronic-care"),
            workers: 1,
            env: EnvConfig::default(),
            data: DataConfig::default(),
            train: TrainSettings::default(),
            grid: GridConfig::default(),
            eval: EvalConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Chronic,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub chronic: ChronicCareConfig,
    pub critical: CriticalCareConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Chronic,
            chronic: ChronicCareConfig::default(),
            critical: CriticalCareConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Environment, CliError> {
        Ok(match self.kind {
            EnvKind::Chronic => build_chronic_care(&self.chronic)?,
            EnvKind::Critical => build_critical_care(&self.critical)?,
        })
    }

    /// Seed field of the selected generator; mixed into every rollout seed.
    pub fn seed(&self) -> u64 {
        match self.kind {
            EnvKind::Chronic => self.chronic.seed,
            EnvKind::Critical => self.critical.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_episodes: usize,
    /// Train, validation and test shares of the episodes.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_episodes: 3000,
            split: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_sync_interval: usize,
    pub optimizer: OptimizerKind,
    /// Gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// `"tabular"` or `"mlp<w>x<w>..."`, e.g. `"mlp256x256"`.
    pub architectures: Vec<String>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 64,
            learning_rate: 1e-3,
            target_sync_interval: 100,
            optimizer: OptimizerKind::Adam,
            clip_norm: 10.0,
            architectures: vec![Architecture::default_network().label()],
        }
    }
}

impl TrainSettings {
    pub fn parsed_architectures(&self) -> Result<Vec<Architecture>, CliError> {
        self.architectures
            .iter()
            .map(|s| parse_architecture(s))
            .collect()
    }
}

/// Inverse of `Architecture::label`.
pub fn parse_architecture(s: &str) -> Result<Architecture, CliError> {
    if s == "tabular" {
        return Ok(Architecture::Tabular);
    }
    let bad = || {
        CliError::Config(format!(
            "unknown architecture {s:?}; expected \"tabular\" or e.g. \"mlp64x64\""
        ))
    };
    let widths = s.strip_prefix("mlp").ok_or_else(bad)?;
    let hidden = widths
        .split('x')
        .map(|w| w.parse::<usize>().ok().filter(|&w| w > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(bad)?;
    Ok(Architecture::Mlp { hidden })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingFamily {
    pub mode: SamplingMode,
    pub ks: Vec<f64>,
    /// Positions of the strata tags that define resampling strata.
    #[serde(default)]
    pub strata_keys: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub ddqn: bool,
    pub alphas: Vec<f64>,
    /// Conservative weight used with every sampling plan.
    pub sampling_alpha: f64,
    pub sampling: Vec<SamplingFamily>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            ddqn: true,
            alphas: vec![1.0, 0.9, 0.8, 0.5, 0.1],
            sampling_alpha: 1.0,
            sampling: vec![
                SamplingFamily {
                    mode: SamplingMode::Under,
                    ks: vec![0.4, 0.8, 1.2],
                    strata_keys: vec![],
                },
                SamplingFamily {
                    mode: SamplingMode::Over,
                    ks: vec![0.4, 0.8],
                    strata_keys: vec![],
                },
                SamplingFamily {
                    mode: SamplingMode::UnderOver,
                    ks: vec![1.0],
                    strata_keys: vec![],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorSource {
    /// Multinomial logistic regression fitted on the training split.
    Fitted,
    /// The generator's logging policy.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub epsilon: f64,
    pub behavior: BehaviorSource,
    pub c_grid: Vec<f64>,
    pub class_weighting: Vec<bool>,
    pub holdout_fraction: f64,
    pub fit_iterations: usize,
    pub fit_learning_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let fit = BehaviorFitOptions::default();
        Self {
            epsilon: DEFAULT_EPSILON,
            behavior: BehaviorSource::Fitted,
            c_grid: DEFAULT_C_GRID.to_vec(),
            class_weighting: fit.class_weighting,
            holdout_fraction: fit.holdout_fraction,
            fit_iterations: fit.iterations,
            fit_learning_rate: fit.learning_rate,
        }
    }
}

impl EvalConfig {
    pub fn fit_options(&self, seed: u64) -> BehaviorFitOptions {
        BehaviorFitOptions {
            c_grid: self.c_grid.clone(),
            class_weighting: self.class_weighting.clone(),
            holdout_fraction: self.holdout_fraction,
            iterations: self.fit_iterations,
            learning_rate: self.fit_learning_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Random instances for the constraint bound.
    pub bound_instances: usize,
    /// Finite-difference probes per loss.
    pub gradient_probes: usize,
    /// Episodes of chronic-care data for the preservation check.
    pub preservation_episodes: usize,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            bound_instances: 100,
            gradient_probes: 64,
            preservation_episodes: 5000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return fail("seeds must be nonempty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        if self.workers == 0 {
            return fail("workers must be >= 1".into());
        }
        let split = self.data.split;
        if split.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return fail(format!(
                "split ratios must be in [0, 1] and sum to 1, got {split:?}"
            ));
        }
        if split[0] == 0.0 || split[1] == 0.0 || split[2] == 0.0 {
            return fail("every split needs a positive share".into());
        }
        if self.data.n_episodes < 3 {
            return fail("need at least 3 episodes".into());
        }
        if self.train.steps == 0 {
            return fail("train.steps must be positive".into());
        }
        if self.train.clip_norm < 0.0 {
            return fail("train.clip_norm must be >= 0".into());
        }
        if self.train.architectures.is_empty() {
            return fail("train.architectures must be nonempty".into());
        }
        self.train.parsed_architectures()?;
        if self
            .grid
            .alphas
            .iter()
            .chain([&self.grid.sampling_alpha])
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return fail("alphas must be finite and >= 0".into());
        }
        for fam in &self.grid.sampling {
            if fam.ks.is_empty() || fam.ks.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                return fail(format!(
                    "sampling family {}: ks must be nonempty and positive",
                    fam.mode.name()
                ));
            }
        }
        if !(self.eval.epsilon > 0.0 && self.eval.epsilon < 1.0) {
            return fail(format!(
                "eval.epsilon must lie in (0, 1), got {}",
                self.eval.epsilon
            ));
        }
        self.env.build()?;
        Ok(())
    }
}
