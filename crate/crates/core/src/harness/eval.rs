use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvPreset};
use crate::error::{Error, Result};
use crate::guidance::{DemoSet, DistanceConfig};
use crate::ppo::{collect_rollouts, Actor};
use crate::trainer::{stream_rng, Agent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    /// NaN without demos.
    pub mean_mmd_to_demos: f64,
}

/// Roll out `actor` for `episodes` episodes and summarize.
pub fn evaluate<A: Actor>(
    env: &mut dyn Env,
    actor: &A,
    episodes: usize,
    seed: u64,
    demos: Option<(&DemoSet, &DistanceConfig)>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be positive".into()));
    }
    let mut rng = stream_rng(seed, 0);
    let trajs = collect_rollouts(env, actor, episodes, &mut rng)?;
    let n = trajs.len() as f64;
    let mmd = match demos {
        None => f64::NAN,
        Some((set, dist)) => {
            let features = set.features(&dist.features)?;
            let mut total = 0.0;
            for t in &trajs {
                total += dist.distance(t, &features)?.0;
            }
            total / n
        }
    };
    Ok(EvalReport {
        episodes,
        success_rate: trajs.iter().filter(|t| t.success()).count() as f64 / n,
        mean_return: trajs.iter().map(|t| t.return_value()).sum::<f64>() / n,
        mean_mmd_to_demos: mmd,
    })
}

/// Load a checkpoint and evaluate it on the environment it was trained on.
/// Greedy (argmax / mean action) unless `sample` is set.
pub fn eval_checkpoint(
    ckpt: &Path,
    episodes: usize,
    seed: u64,
    sample: bool,
    demos: Option<(&DemoSet, &DistanceConfig)>,
) -> Result<EvalReport> {
    let (agent, meta) = Agent::load(ckpt)?;
    let preset = EnvPreset::parse(&meta.env_id)
        .map_err(|_| Error::Checkpoint(format!("checkpoint names unknown environment `{}`", meta.env_id)))?;
    let mut env = preset.build();
    check_compatible(&agent, env.as_ref())?;
    evaluate(env.as_mut(), &agent.actor(!sample), episodes, seed, demos)
}

fn check_compatible(agent: &Agent, env: &dyn Env) -> Result<()> {
    if agent.policy.net.input_dim() != env.observation_dim() || agent.policy.action_space() != env.action_space() {
        return Err(Error::Checkpoint(format!(
            "checkpoint does not fit environment `{}` ({} inputs, {:?})",
            env.id(),
            env.observation_dim(),
            env.action_space()
        )));
    }
    Ok(())
}
