//! Experiment orchestration: TOML configs, multi-seed training runs with
//! CSV metrics and checkpoints, checkpoint evaluation, and ablations.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod run;

pub use ablate::{run_ablation, AblationAxis, AblationReport};
pub use config::{DemoSource, ExperimentConfig};
pub use eval::{eval_checkpoint, evaluate, EvalReport};
pub use metrics::{MetricRow, TimingRow};
pub use run::{run_experiment, Manifest, SeedStatus};
