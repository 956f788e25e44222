use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::trainer::IterationMetrics;

/// One line of `metrics.csv`: one row per (iteration, seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_mmd_to_demos: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub guidance_surrogate_loss: f64,
    pub guidance_value_loss: f64,
    pub mean_guidance_reward: f64,
    pub demo_count: usize,
}

impl MetricRow {
    pub fn new(seed: u64, m: &IterationMetrics) -> Self {
        Self {
            iteration: m.iteration,
            seed,
            success_rate: m.success_rate,
            mean_return: m.mean_return,
            mean_mmd_to_demos: m.mean_mmd_to_demos,
            surrogate_loss: m.surrogate_loss,
            value_loss: m.value_loss,
            clip_fraction: m.clip_fraction,
            approx_kl: m.approx_kl,
            guidance_surrogate_loss: m.guidance_surrogate_loss,
            guidance_value_loss: m.guidance_value_loss,
            mean_guidance_reward: m.mean_guidance_reward,
            demo_count: m.demo_count,
        }
    }
}

/// Wall-clock seconds per iteration, kept apart from `metrics.csv` so that
/// file stays byte-identical across repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub iteration: usize,
    pub seed: u64,
    pub wall_time: f64,
}

/// CSV writer that flushes after every row so partial runs stay readable.
pub struct RowWriter {
    inner: csv::Writer<File>,
}

impl RowWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { inner: csv::Writer::from_path(path)? })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Concatenate per-seed CSV files (same header) into `out`, in the given
/// order.
pub fn merge_csv(inputs: &[impl AsRef<Path>], out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out)?;
    let mut header_written = false;
    for input in inputs {
        let mut r = csv::Reader::from_path(input.as_ref())?;
        if !header_written {
            w.write_record(r.headers()?)?;
            header_written = true;
        }
        for rec in r.records() {
            w.write_record(&rec?)?;
        }
    }
    w.flush()?;
    Ok(())
}
