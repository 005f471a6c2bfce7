use std::path::Path;

use anyhow::{Context, Result};
use orvos_core::dataset::GeneratorConfig;
use orvos_core::model::ModelConfig;
use orvos_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run depends on besides its input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub audit: AuditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    /// Audit at most this many videos (all when absent). Replaying every
    /// prefix costs time quadratic in video length, about half a minute per
    /// default-length video.
    pub max_videos: Option<usize>,
    /// First step at which the test-only look-ahead mutant peeks.
    pub leak_from: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            max_videos: Some(4),
            leak_from: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.generator.validate()?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn dump(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let cfg = RunConfig::load(None).unwrap();
        let text = cfg.dump().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[model]\ndepth = 3").is_err());
        let partial: RunConfig = toml::from_str("seed = 3\n[model]\ndim = 32").unwrap();
        assert_eq!(partial.model.dim, 32);
        assert_eq!(partial.model.vis_dim, ModelConfig::default().vis_dim);
    }
}
