use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use posg::demos::{self, DemoQuality};
use posg::envs::EnvPreset;
use posg::harness::{eval_checkpoint, run_ablation, run_experiment, AblationAxis, ExperimentConfig};
use posg::kernel::FeatureMap;
use posg::guidance::DistanceConfig;
use posg::{Error, Result};

#[derive(Parser)]
#[command(name = "posg", version, about = "Policy optimization with guidance from state-only demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write scripted state-only demonstrations as JSON Lines.
    GenDemos {
        #[arg(long)]
        env: String,
        #[arg(long, default_value = "expert")]
        quality: String,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions instead of acting greedily.
        #[arg(long)]
        sample: bool,
        /// Demo file to report the distance to.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Train once per value of an ablation axis and merge the metrics.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// demo_count or demo_quality
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 1,3,6
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = run_experiment(&cfg)?;
            for s in &manifest.seeds {
                println!("seed {}: {:?} after {} iterations", s.seed, s.status, s.iterations_completed);
            }
            println!("metrics written to {}", cfg.output_dir.join(&manifest.metrics).display());
            if manifest.failed() {
                return Err(Error::Divergence("at least one seed diverged; see manifest.json".into()));
            }
        }
        Command::GenDemos { env, quality, count, seed, out } => {
            let preset = EnvPreset::parse(&env)?;
            let records = demos::generate(preset, DemoQuality::parse(&quality)?, count, seed)?;
            demos::save_records(&out, &records)?;
            let mean = records.iter().map(|r| r.return_).sum::<f64>() / records.len() as f64;
            println!("wrote {} {quality} demos for {env} to {} (mean return {mean})", records.len(), out.display());
        }
        Command::Eval { ckpt, episodes, seed, sample, demos: demo_path } => {
            let env_id = posg::Agent::load(&ckpt)?.1.env_id;
            let demo_set = demo_path
                .map(|p| demos::load_demos(&p, &env_id, usize::MAX))
                .transpose()?;
            let distance = DistanceConfig {
                features: FeatureMap::Identity,
                ..DistanceConfig::default()
            };
            let report = eval_checkpoint(&ckpt, episodes, seed, sample, demo_set.as_ref().map(|d| (d, &distance)))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { config, axis, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_ablation(&cfg, AblationAxis::parse(&axis)?, &values)?;
            println!("ablation written to {}", report.path.display());
            if report.runs.iter().any(|(_, m)| m.failed()) {
                return Err(Error::Divergence("at least one run diverged".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
