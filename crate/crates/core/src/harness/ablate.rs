use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{DemoSource, ExperimentConfig};
use super::run::{run_experiment, Manifest, METRICS_FILE};
use crate::demos::DemoQuality;
use crate::error::{Error, Result};

pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    DemoCount,
    DemoQuality,
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::DemoCount => "demo_count",
            AblationAxis::DemoQuality => "demo_quality",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "demo_count" => Ok(AblationAxis::DemoCount),
            "demo_quality" => Ok(AblationAxis::DemoQuality),
            _ => Err(Error::Config(format!("unknown ablation axis `{s}` (expected demo_count or demo_quality)"))),
        }
    }

    /// The base config with this axis set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        let demos = cfg.demos.get_or_insert_with(DemoSource::default);
        match self {
            AblationAxis::DemoCount => {
                let n: usize = value
                    .parse()
                    .map_err(|_| Error::Config(format!("demo_count value `{value}` is not a positive integer")))?;
                if n == 0 {
                    return Err(Error::Config("demo_count values must be positive".into()));
                }
                demos.count = Some(n);
            }
            AblationAxis::DemoQuality => demos.quality = DemoQuality::parse(value)?,
        }
        cfg.output_dir = base.output_dir.join(format!("{}={value}", self.name()));
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub path: PathBuf,
    pub runs: Vec<(String, Manifest)>,
}

/// One full training run per value, each in `<output_dir>/<axis>=<value>`,
/// merged into `<output_dir>/ablation.csv`.
pub fn run_ablation(base: &ExperimentConfig, axis: AblationAxis, values: &[String]) -> Result<AblationReport> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let cfg = axis.apply(base, v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut runs = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        runs.push((value.clone(), run_experiment(cfg)?));
    }
    let path = base.output_dir.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for (i, (value, cfg)) in values.iter().zip(&configs).enumerate() {
        let mut r = csv::Reader::from_path(cfg.output_dir.join(METRICS_FILE))?;
        if i == 0 {
            let mut header = csv::StringRecord::from(vec!["axis", "value"]);
            header.extend(r.headers()?.iter());
            w.write_record(&header)?;
        }
        for rec in r.records() {
            let mut out = csv::StringRecord::from(vec![axis.name(), value.as_str()]);
            out.extend(rec?.iter());
            w.write_record(&out)?;
        }
    }
    w.flush()?;
    Ok(AblationReport { path, runs })
}
