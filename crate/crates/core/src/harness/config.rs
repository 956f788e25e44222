use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demos::{self, DemoQuality};
use crate::envs::EnvPreset;
use crate::error::{Error, Result};
use crate::guidance::{DemoSet, GuidanceMode};
use crate::ppo::PpoConfig;
use crate::trainer::{Algorithm, GuidanceConfig, TrainerConfig};

/// Where the demonstrations come from: a JSONL file, or scripted
/// generation when `path` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSource {
    pub path: Option<PathBuf>,
    /// Keep only records with this quality tag (file), or the quality to
    /// generate.
    pub quality: DemoQuality,
    /// Number of demos: the first `count` matching records of a file (all
    /// when unset), or how many to generate (1 when unset).
    pub count: Option<usize>,
    /// Generation seed.
    pub seed: u64,
}

impl Default for DemoSource {
    fn default() -> Self {
        Self { path: None, quality: DemoQuality::Expert, count: None, seed: 0 }
    }
}

impl DemoSource {
    pub fn load(&self, env: EnvPreset, capacity: usize) -> Result<DemoSet> {
        if self.count == Some(0) {
            return Err(Error::Config("demo count must be positive".into()));
        }
        let records = match &self.path {
            Some(path) => {
                let mut recs: Vec<_> = demos::load_records(path)?
                    .into_iter()
                    .filter(|r| r.quality == self.quality.name())
                    .collect();
                if let Some(n) = self.count {
                    if recs.len() < n {
                        return Err(Error::Config(format!(
                            "{} holds {} `{}` demos, {n} requested",
                            path.display(),
                            recs.len(),
                            self.quality.name()
                        )));
                    }
                    recs.truncate(n);
                }
                if recs.is_empty() {
                    return Err(Error::Config(format!(
                        "{} holds no `{}` demos",
                        path.display(),
                        self.quality.name()
                    )));
                }
                recs
            }
            None => demos::generate(env, self.quality, self.count.unwrap_or(1), self.seed)?,
        };
        demos::demo_set(&records, env.id(), capacity)
    }
}

/// A full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvPreset,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Run seeds concurrently, each writing its own files.
    #[serde(default)]
    pub parallel_seeds: bool,
    #[serde(default)]
    pub demos: Option<DemoSource>,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory, and
    /// validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let Some(p) = self.demos.as_mut().and_then(|d| d.path.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig { ppo: self.ppo.clone(), guidance: self.guidance.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        self.ppo.validate()?;
        self.guidance.validate()?;
        if self.guidance.params.mode == GuidanceMode::DiscreteTable && !self.env.is_discrete() {
            return Err(Error::Config(format!(
                "discrete_table guidance needs a discrete environment, `{}` is continuous",
                self.env.id()
            )));
        }
        self.guidance.distance.features.output_dim(self.env.build().observation_dim())?;
        match &self.demos {
            None if self.algorithm == Algorithm::Posg => {
                return Err(Error::Config("algorithm `posg` needs a [demos] section".into()));
            }
            Some(DemoSource { path: Some(p), .. }) if !p.is_file() => {
                return Err(Error::Config(format!("demo file {} does not exist", p.display())));
            }
            _ => {}
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {s} listed twice")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
env = "kdt-small"
algorithm = "ppo"
iterations = 3
seeds = [0]
output_dir = "out"
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.env, EnvPreset::KdtSmall);
        assert_eq!(cfg.ppo, PpoConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.demos = Some(DemoSource::default());
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.env = EnvPreset::PointMass;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.algorithm = Algorithm::Posg;
        assert!(cfg.validate().is_err());

        assert!(ExperimentConfig::from_toml("env = \"kdt-small\"\nbogus = 1").is_err());
    }
}
