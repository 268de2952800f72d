use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use gridmix::data::{ExampleConfig, RansacConfig, ScenarioConfig};
use gridmix::inference::NmsConfig;
use gridmix::metrics::MetricConfig;
use gridmix::network::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

/// Named model sizes; an explicit `[model]` table replaces the preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    #[default]
    Default,
    Toy,
    Tiny,
}

impl ModelPreset {
    pub fn config(self) -> ModelConfig {
        match self {
            Self::Default => ModelConfig::default(),
            Self::Toy => ModelConfig::toy(),
            Self::Tiny => ModelConfig::tiny(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every setting of a run in one document. A top-level `seed` replaces the
/// seeds of all sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub preset: ModelPreset,
    pub model: Option<ModelConfig>,
    pub scenario: ScenarioConfig,
    /// Steps per training and evaluation sequence.
    pub t_max: usize,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
    pub nms: NmsConfig,
    pub ransac: RansacConfig,
    /// Heatmap pixel size in meters.
    pub heatmap_resolution: f64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            preset: ModelPreset::default(),
            model: None,
            scenario: ScenarioConfig::default(),
            t_max: ExampleConfig::default().t_max,
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
            nms: NmsConfig::default(),
            ransac: RansacConfig::default(),
            heatmap_resolution: 0.5,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies a seed override, then propagates the top-level seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.scenario.seed = s;
            self.train.seed = s;
            self.ransac.seed = s;
            if let Some(m) = &mut self.model {
                m.seed = s;
            }
        }
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = self.model.clone().unwrap_or_else(|| self.preset.config());
        if let Some(s) = self.seed {
            m.seed = s;
        }
        m
    }

    pub fn example_config(&self, model: &ModelConfig) -> ExampleConfig {
        ExampleConfig {
            t_max: self.t_max,
            horizon: model.horizon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[scenario]\nn_trakcs = 3").is_err());
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
    }

    #[test]
    fn top_level_seed_reaches_every_section() {
        let c = RunConfig::from_toml("seed = 9\npreset = \"toy\"")
            .unwrap()
            .with_seed(None);
        assert_eq!(c.scenario.seed, 9);
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.ransac.seed, 9);
        assert_eq!(c.model_config().seed, 9);
        assert_eq!(c.model_config().grid_n, 4);
        assert_eq!(c.with_seed(Some(3)).scenario.seed, 3);
    }
}
