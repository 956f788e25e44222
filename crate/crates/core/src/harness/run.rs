use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{merge_csv, MetricRow, RowWriter, TimingRow};
use crate::error::{Error, Result};
use crate::guidance::DemoSet;
use crate::trainer::Trainer;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub status: SeedStatus,
    pub iterations_completed: usize,
    /// Failure message, if any.
    pub error: Option<String>,
    pub metrics: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// `manifest.json`: what ran and where everything went. Paths are relative
/// to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub algorithm: String,
    pub iterations: usize,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub timing: PathBuf,
    pub seeds: Vec<SeedRecord>,
}

impl Manifest {
    pub fn failed(&self) -> bool {
        self.seeds.iter().any(|s| s.status == SeedStatus::Failed)
    }
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join("seeds").join(seed.to_string())
}

fn run_seed(cfg: &ExperimentConfig, demos: Option<&DemoSet>, seed: u64) -> Result<SeedRecord> {
    let dir = seed_dir(&cfg.output_dir, seed);
    fs::create_dir_all(&dir)?;
    let mut metrics = RowWriter::create(&dir.join(METRICS_FILE))?;
    let mut timing = RowWriter::create(&dir.join(TIMING_FILE))?;
    let rel = |p: &str| PathBuf::from("seeds").join(seed.to_string()).join(p);
    let mut record = SeedRecord {
        seed,
        status: SeedStatus::Completed,
        iterations_completed: 0,
        error: None,
        metrics: rel(METRICS_FILE),
        checkpoint: None,
    };
    let mut trainer = Trainer::new(cfg.env.build(), demos.cloned(), cfg.trainer_config(), seed)?;
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        match trainer.step(cfg.algorithm) {
            Ok(m) => {
                metrics.write(&MetricRow::new(seed, &m))?;
                timing.write(&TimingRow { iteration: m.iteration, seed, wall_time: start.elapsed().as_secs_f64() })?;
                record.iterations_completed = m.iteration;
            }
            Err(e @ Error::Divergence(_)) => {
                record.status = SeedStatus::Failed;
                record.error = Some(e.to_string());
                return Ok(record);
            }
            Err(e) => return Err(e.context(format_args!("seed {seed}"))),
        }
    }
    let meta = trainer.checkpoint_meta(cfg.algorithm);
    trainer.agent().save(&dir.join(CHECKPOINT_DIR), &meta)?;
    record.checkpoint = Some(rel(CHECKPOINT_DIR));
    Ok(record)
}

/// Train every seed, write per-seed and merged metrics, the config copy,
/// checkpoints and the manifest. Divergent seeds are recorded as failed in
/// the manifest rather than aborting the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(CONFIG_COPY), cfg.to_toml()?)?;
    let demos = cfg
        .demos
        .as_ref()
        .map(|d| d.load(cfg.env, cfg.guidance.capacity))
        .transpose()?;

    let records: Vec<SeedRecord> = if cfg.parallel_seeds {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, demos.as_ref(), s))
            .collect::<Result<_>>()?
    } else {
        cfg.seeds
            .iter()
            .map(|&s| run_seed(cfg, demos.as_ref(), s))
            .collect::<Result<_>>()?
    };

    let per_seed = |file: &str| -> Vec<PathBuf> {
        cfg.seeds.iter().map(|&s| seed_dir(&cfg.output_dir, s).join(file)).collect()
    };
    merge_csv(&per_seed(METRICS_FILE), &cfg.output_dir.join(METRICS_FILE))?;
    merge_csv(&per_seed(TIMING_FILE), &cfg.output_dir.join(TIMING_FILE))?;

    let manifest = Manifest {
        env: cfg.env.id().into(),
        algorithm: cfg.algorithm.name().into(),
        iterations: cfg.iterations,
        config: CONFIG_COPY.into(),
        metrics: METRICS_FILE.into(),
        timing: TIMING_FILE.into(),
        seeds: records,
    };
    fs::write(cfg.output_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
