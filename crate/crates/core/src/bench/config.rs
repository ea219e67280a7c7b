//! Experiment configuration: TOML ingestion, presets, validation and hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::consistency::ConsistencyConfig;
use super::contraction::ContractionConfig;
use crate::dro::DroConfig;
use crate::models::{NoiseSpec, OtAdaptConfig, TrainConfig};
use crate::priors::PriorConfig;
use crate::synthgen::{GeneratorConfig, Shots};
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "PGDRO_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
    Contraction,
    Consistency,
    Heatmap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Erm,
    Ot,
    Pgdro,
    Saa,
    Wdro,
    Fewshot,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Erm, Method::Ot, Method::Pgdro, Method::Saa, Method::Wdro, Method::Fewshot];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Ot => "ot",
            Method::Pgdro => "pgdro",
            Method::Saa => "saa",
            Method::Wdro => "wdro",
            Method::Fewshot => "fewshot",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Regression protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    /// Response noise standard deviation.
    pub sigma: f64,
    /// Target Dirichlet concentration, replacing the generator's.
    pub alpha_test: f64,
    /// Covariance scale per disturbance level: `λ_cov = cov_scale · level`.
    pub cov_scale: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            sigma: 0.5,
            alpha_test: 0.20,
            cov_scale: 1.15,
        }
    }
}

/// Support-count sweep for the mixture-weight heatmap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    /// Shots per class, increasing; supports are nested across entries.
    pub shots: Vec<usize>,
    /// Disturbance level of the target.
    pub level: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig {
            shots: vec![1, 4, 16],
            level: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Disturbance levels; each sets the target `λ_cov`. Level 0 is the
    /// identity shift.
    pub levels: Vec<f64>,
    /// Empty means `$PGDRO_OUTPUT_DIR`, then `./pgdro-out`.
    pub output_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub prior: PriorConfig,
    pub dro: DroConfig,
    pub train: TrainConfig,
    pub ot: OtAdaptConfig,
    pub saa: NoiseSpec,
    pub regression: RegressionConfig,
    pub heatmap: HeatmapConfig,
    pub contraction: ContractionConfig,
    pub consistency: ConsistencyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Classification,
            methods: vec![Method::Erm, Method::Ot, Method::Pgdro],
            seeds: (0..5).collect(),
            levels: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            output_dir: PathBuf::new(),
            generator: GeneratorConfig::default(),
            prior: PriorConfig::default(),
            dro: DroConfig::default(),
            train: TrainConfig::default(),
            ot: OtAdaptConfig::default(),
            saa: NoiseSpec::default(),
            regression: RegressionConfig::default(),
            heatmap: HeatmapConfig::default(),
            contraction: ContractionConfig::default(),
            consistency: ConsistencyConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 6] = [
    "paper-classification",
    "paper-regression",
    "heatmap",
    "contraction",
    "consistency",
    "smoke",
];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig::default();
        let cfg = match name {
            "paper-classification" => base,
            "paper-regression" => {
                let mut c = ExperimentConfig {
                    task: Task::Regression,
                    levels: vec![0.0, 1.0, 2.0],
                    ..base
                };
                c.generator.shift.dirichlet_target = c.regression.alpha_test;
                c
            }
            "heatmap" => {
                let mut c = ExperimentConfig {
                    task: Task::Heatmap,
                    seeds: (0..10).collect(),
                    ..base
                };
                c.generator.shots = Shots::Fixed(16);
                c
            }
            "contraction" => ExperimentConfig {
                task: Task::Contraction,
                seeds: vec![0],
                ..base
            },
            "consistency" => ExperimentConfig {
                task: Task::Consistency,
                seeds: vec![0],
                ..base
            },
            "smoke" => {
                let mut c = ExperimentConfig {
                    seeds: vec![0],
                    levels: vec![1.0],
                    ..base
                };
                c.generator.n_train = 600;
                c.generator.n_test = 300;
                c.train.epochs = 5;
                c
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (available: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("levels must be a nonempty list of finite values >= 0".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.heatmap.shots.is_empty() || self.heatmap.shots.windows(2).any(|w| w[0] >= w[1]) || self.heatmap.shots[0] == 0
        {
            return Err(Error::Config("heatmap.shots must be positive and strictly increasing".into()));
        }
        if !(self.regression.sigma >= 0.0 && self.regression.alpha_test > 0.0 && self.regression.cov_scale > 0.0) {
            return Err(Error::Config("regression needs sigma >= 0, alpha_test > 0 and cov_scale > 0".into()));
        }
        self.generator.validate()?;
        self.prior.validate()?;
        self.dro.validate().map_err(|e| Error::Config(format!("dro: {e}")))?;
        self.train.validate()?;
        self.contraction.validate()?;
        self.consistency.validate()
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// `output_dir` cleared so relocating a run does not change it.
    pub fn hash(&self) -> Result<String> {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(hex::encode(&digest[..8]))
    }

    /// Configured directory, else `$PGDRO_OUTPUT_DIR`, else `pgdro-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if !self.output_dir.as_os_str().is_empty() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("pgdro-out"),
        }
    }

    /// Generator for one disturbance level of the configured task.
    pub fn generator_at(&self, level: f64) -> GeneratorConfig {
        let mut g = self.generator.clone();
        if self.task == Task::Regression {
            g.shift.dirichlet_target = self.regression.alpha_test;
        }
        if level == 0.0 {
            g.shift.lambda_mean = 0.0;
            g.shift.lambda_cov = 0.0;
            g.shift.rotation_deg = 0.0;
        } else if self.task == Task::Regression {
            g.shift.lambda_cov = self.regression.cov_scale * level;
        } else {
            g.shift.lambda_cov = level;
        }
        g
    }
}

/// Parses `--seeds`: a count `n` (seeds `0..n`) or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list `{s}`"));
    if s.contains(',') {
        s.split(',').map(|t| t.trim().parse::<u64>().map_err(|_| bad())).collect()
    } else {
        let n: u64 = s.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(Error::Config("--seeds needs at least one seed".into()));
        }
        Ok((0..n).collect())
    }
}
