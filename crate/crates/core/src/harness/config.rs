use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corruption::Targets;
use crate::datagen::{CsvSchema, GeneratorConfig, PreprocSpec, ResponseSurface, IHDP_BINARY, IHDP_CONTINUOUS, IHDP_TARGETS};
use crate::networks::ModelKind;
use crate::trainer::TrainConfig;

/// Where the data of one replication comes from. Generated datasets are
/// redrawn per seed; a CSV file is reused and only the split changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Generator {
        response_surface: ResponseSurface,
        n_samples: Option<usize>,
        n_features: Option<usize>,
        n_binary: Option<usize>,
        selection_bias_strength: Option<f64>,
        noise_std: Option<f64>,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl DatasetSpec {
    pub fn generator(surface: ResponseSurface) -> Self {
        DatasetSpec::Generator {
            response_surface: surface,
            n_samples: None,
            n_features: None,
            n_binary: None,
            selection_bias_strength: None,
            noise_std: None,
        }
    }

    /// Generator settings for one replication seed, presets filled in.
    pub fn generator_config(&self, seed: u64) -> Option<GeneratorConfig> {
        match self {
            DatasetSpec::Generator {
                response_surface,
                n_samples,
                n_features,
                n_binary,
                selection_bias_strength,
                noise_std,
            } => {
                let base = match response_surface {
                    ResponseSurface::IhdpLike => GeneratorConfig::ihdp_like(seed),
                    ResponseSurface::AcicLike => GeneratorConfig::acic_like(seed),
                };
                Some(GeneratorConfig {
                    n_samples: n_samples.unwrap_or(base.n_samples),
                    n_features: n_features.unwrap_or(base.n_features),
                    n_binary: n_binary.unwrap_or(base.n_binary),
                    selection_bias_strength: selection_bias_strength.unwrap_or(base.selection_bias_strength),
                    noise_std: noise_std.unwrap_or(base.noise_std),
                    ..base
                })
            }
            DatasetSpec::Csv { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionGrid {
    pub cls: Vec<f64>,
    /// Defaults to the seven privacy columns on the IHDP layout, otherwise all columns.
    pub targets: Option<Targets>,
    pub noise_variance: f64,
    /// Adds a `cl = 0` cell (uncorrupted held-out test set) when missing.
    pub include_clean: bool,
}

impl Default for CorruptionGrid {
    fn default() -> Self {
        CorruptionGrid {
            cls: vec![0.05, 0.125, 0.2, 0.333],
            targets: None,
            noise_variance: 0.1,
            include_clean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub preproc: PreprocSpec,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default)]
    pub corruption: CorruptionGrid,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Mixed into every corruption seed.
    #[serde(default)]
    pub experiment_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_split() -> f64 {
    0.75
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl ExperimentConfig {
    /// The full IHDP-like grid: four models, four corruption levels, ten seeds.
    pub fn default_ihdp() -> Self {
        ExperimentConfig {
            name: "ihdp_like".into(),
            dataset: DatasetSpec::generator(ResponseSurface::IhdpLike),
            preproc: PreprocSpec::default(),
            split_ratio: default_split(),
            corruption: CorruptionGrid::default(),
            models: default_models(),
            seeds: default_seeds(),
            experiment_seed: 0,
            train: TrainConfig::default(),
            output_dir: None,
        }
    }

    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json { Self::from_json(&text)? } else { Self::from_toml(&text)? };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.corruption.cls.is_empty() {
            return bad("at least one corruption level is required".into());
        }
        if let Some(cl) = self.corruption.cls.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return bad(format!("corruption level {cl} outside [0, 1]"));
        }
        if !(self.corruption.noise_variance > 0.0) {
            return bad("corruption.noise_variance must be positive".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must be in (0, 1), got {}", self.split_ratio));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        self.preproc.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(g) = self.dataset.generator_config(0) {
            g.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Sorted, de-duplicated levels, with 0 added when `include_clean`.
    pub fn levels(&self) -> Vec<f64> {
        let mut cls = self.corruption.cls.clone();
        if self.corruption.include_clean {
            cls.push(0.0);
        }
        cls.sort_by(f64::total_cmp);
        cls.dedup();
        cls
    }

    pub fn targets_for(&self, feature_names: &[String]) -> Targets {
        if let Some(t) = &self.corruption.targets {
            return t.clone();
        }
        let ihdp_layout = feature_names.len() == IHDP_CONTINUOUS.len() + IHDP_BINARY.len()
            && IHDP_TARGETS.iter().all(|t| feature_names.iter().any(|n| n == t));
        if ihdp_layout {
            Targets::named(IHDP_TARGETS)
        } else {
            Targets::all()
        }
    }
}
