//! One training run: an agent, its optimizers, the demo memory, and the
//! per-iteration loop for both POSG and the plain PPO baseline.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, Env};
use crate::error::{Error, Result};
use crate::guidance::{compute_weights, guidance_rewards, DemoSet, DistanceConfig, GuidanceMode, GuidanceParams};
use crate::kernel::PointSet;
use crate::nn::{AdamConfig, AdamState, DenseNet};
use crate::policy::Policy;
use crate::ppo::{
    collect_rollouts, compute_gae, ppo_update, scale_observation, standardize, PpoBatch, PpoConfig,
    ScaledPolicy, StepEnd, UpdateStats,
};
use crate::trajectory::Trajectory;

// RNG stream ids; each consumer owns one so that toggling the guidance step
// leaves every other stream untouched.
const STREAM_POLICY_INIT: u64 = 0;
const STREAM_VALUE_ENV_INIT: u64 = 1;
const STREAM_VALUE_GUIDANCE_INIT: u64 = 2;
const STREAM_ROLLOUT: u64 = 3;
const STREAM_ENV_SHUFFLE: u64 = 4;
const STREAM_GUIDANCE_SHUFFLE: u64 = 5;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Posg,
    Ppo,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Posg => "posg",
            Algorithm::Ppo => "ppo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Run the guidance-reward update step. Off reduces POSG to PPO.
    pub enabled: bool,
    pub params: GuidanceParams,
    /// Discount for guidance returns; `None` picks 1 for the discrete table
    /// and the environment γ for the continuous regime.
    pub gamma: Option<f64>,
    /// Let successful rollouts replace weaker demos.
    pub update_demos: bool,
    pub capacity: usize,
    pub distance: DistanceConfig,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            params: GuidanceParams::default(),
            gamma: None,
            update_demos: true,
            capacity: 10,
            distance: DistanceConfig::default(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.distance.kernel.validate()?;
        if self.capacity == 0 {
            return Err(Error::Config("demo capacity must be positive".into()));
        }
        if self.distance.max_points == 0 {
            return Err(Error::Config("max_points must be positive".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("guidance gamma must lie in (0, 1], got {g}")));
            }
        }
        Ok(())
    }

    pub fn resolved_gamma(&self, env_gamma: f64) -> f64 {
        self.gamma.unwrap_or(match self.params.mode {
            GuidanceMode::DiscreteTable => 1.0,
            GuidanceMode::ContinuousPerTrajectory => env_gamma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub ppo: PpoConfig,
    pub guidance: GuidanceConfig,
}

/// Everything measured in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    /// Mean over the buffer of the distance to the closest demo; NaN when
    /// the run has no demos.
    pub mean_mmd_to_demos: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub guidance_surrogate_loss: f64,
    pub guidance_value_loss: f64,
    /// Mean raw (unstandardized) guidance reward per step.
    pub mean_guidance_reward: f64,
    pub demo_count: usize,
}

/// Policy and both value heads plus the observation scaling in front of
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub obs_scale: Vec<f64>,
    pub policy: Policy,
    pub value_env: DenseNet,
    pub value_guidance: DenseNet,
}

/// Everything in a checkpoint besides the network weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub env_id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iteration: usize,
    pub action_space: ActionSpace,
    pub obs_scale: Vec<f64>,
    pub log_std: Option<Vec<f64>>,
}

const META_FILE: &str = "meta.json";
const POLICY_FILE: &str = "policy.bin";
const VALUE_ENV_FILE: &str = "value_env.bin";
const VALUE_GUIDANCE_FILE: &str = "value_guidance.bin";

impl Agent {
    pub fn new(env: &dyn Env, hidden: &[usize], seed: u64) -> Self {
        let dim = env.observation_dim();
        let policy = Policy::new(dim, env.action_space(), hidden, &mut stream_rng(seed, STREAM_POLICY_INIT));
        let value_env = DenseNet::mlp(dim, hidden, 1, 1.0, &mut stream_rng(seed, STREAM_VALUE_ENV_INIT));
        let value_guidance =
            DenseNet::mlp(dim, hidden, 1, 1.0, &mut stream_rng(seed, STREAM_VALUE_GUIDANCE_INIT));
        Self { obs_scale: env.observation_scale(), policy, value_env, value_guidance }
    }

    pub fn actor(&self, greedy: bool) -> ScaledPolicy<'_> {
        ScaledPolicy { policy: &self.policy, scale: &self.obs_scale, greedy }
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value_env.is_finite() && self.value_guidance.is_finite()
    }

    pub fn save(&self, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut meta = meta.clone();
        meta.obs_scale = self.obs_scale.clone();
        meta.action_space = self.policy.action_space();
        meta.log_std = self.policy.log_std.clone();
        fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
        self.policy.net.save(&dir.join(POLICY_FILE))?;
        self.value_env.save(&dir.join(VALUE_ENV_FILE))?;
        self.value_guidance.save(&dir.join(VALUE_GUIDANCE_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let text = fs::read_to_string(dir.join(META_FILE))
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(META_FILE).display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        let net = DenseNet::load(&dir.join(POLICY_FILE))?;
        let value_env = DenseNet::load(&dir.join(VALUE_ENV_FILE))?;
        let value_guidance = DenseNet::load(&dir.join(VALUE_GUIDANCE_FILE))?;
        if net.input_dim() != meta.obs_scale.len() {
            return Err(Error::Checkpoint(format!(
                "policy expects {} inputs, metadata lists {} observation scales",
                net.input_dim(),
                meta.obs_scale.len()
            )));
        }
        let policy = Policy::from_parts(net, meta.log_std.clone(), meta.action_space)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((Self { obs_scale: meta.obs_scale.clone(), policy, value_env, value_guidance }, meta))
    }
}

/// Scaled observations of a buffer, one row per step, plus the final
/// observation of every truncated trajectory.
struct BatchLayout {
    inputs: Array2<f64>,
    bootstrap_inputs: Array2<f64>,
    /// For each trajectory, the row of its bootstrap input if truncated.
    bootstrap_row: Vec<Option<usize>>,
}

impl BatchLayout {
    fn new(trajectories: &[Trajectory], scale: &[f64]) -> Self {
        let dim = scale.len();
        let mut flat = Vec::new();
        let mut boot = Vec::new();
        let mut bootstrap_row = Vec::with_capacity(trajectories.len());
        for t in trajectories {
            for obs in t.observations() {
                flat.extend(scale_observation(obs, scale));
            }
            if t.terminated() {
                bootstrap_row.push(None);
            } else {
                bootstrap_row.push(Some(boot.len() / dim));
                boot.extend(scale_observation(t.final_observation(), scale));
            }
        }
        let rows = flat.len() / dim;
        let boot_rows = boot.len() / dim;
        Self {
            inputs: Array2::from_shape_vec((rows, dim), flat).expect("row-major layout"),
            bootstrap_inputs: Array2::from_shape_vec((boot_rows, dim), boot).expect("row-major layout"),
            bootstrap_row,
        }
    }

    /// Per-step values and episode-end markers under `value`.
    fn values_and_ends(&self, trajectories: &[Trajectory], value: &DenseNet) -> Result<(Vec<f64>, Vec<StepEnd>)> {
        let values = predict_column(value, &self.inputs)?;
        let boot = predict_column(value, &self.bootstrap_inputs)?;
        let mut ends = Vec::with_capacity(values.len());
        for (t, row) in trajectories.iter().zip(&self.bootstrap_row) {
            ends.extend(std::iter::repeat_n(StepEnd::Continue, t.len() - 1));
            ends.push(match row {
                None => StepEnd::Terminal,
                Some(r) => StepEnd::Truncated { bootstrap_value: boot[*r] },
            });
        }
        Ok((values, ends))
    }
}

fn predict_column(net: &DenseNet, inputs: &Array2<f64>) -> Result<Vec<f64>> {
    if inputs.nrows() == 0 {
        return Ok(Vec::new());
    }
    let cache = net.forward_batch(inputs.view())?;
    Ok(cache.output().column(0).to_vec())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub struct Trainer {
    env: Box<dyn Env>,
    agent: Agent,
    config: TrainerConfig,
    demos: Option<DemoSet>,
    seed: u64,
    iteration: usize,
    policy_env_opt: AdamState,
    policy_guidance_opt: AdamState,
    value_env_opt: AdamState,
    value_guidance_opt: AdamState,
    rollout_rng: ChaCha8Rng,
    env_shuffle_rng: ChaCha8Rng,
    guidance_shuffle_rng: ChaCha8Rng,
}

impl Trainer {
    /// `demos` is required for POSG and optional for PPO, where it only
    /// feeds the distance metric.
    pub fn new(env: Box<dyn Env>, demos: Option<DemoSet>, config: TrainerConfig, seed: u64) -> Result<Self> {
        config.ppo.validate()?;
        config.guidance.validate()?;
        if config.guidance.params.mode == GuidanceMode::DiscreteTable && !env.discrete_observations() {
            return Err(Error::Config(format!(
                "discrete_table guidance needs a discrete environment, `{}` is continuous",
                env.id()
            )));
        }
        if let Some(d) = &demos {
            config.guidance.distance.features.output_dim(env.observation_dim())?;
            let demo_dim = d.demos()[0].observations()[0].len();
            if demo_dim != env.observation_dim() {
                return Err(Error::Config(format!(
                    "demos have {demo_dim}-dimensional observations, `{}` has {}",
                    env.id(),
                    env.observation_dim()
                )));
            }
        }
        let agent = Agent::new(env.as_ref(), &config.ppo.hidden, seed);
        let policy_lr = AdamConfig::with_lr(config.ppo.learning_rate);
        let value_lr = AdamConfig::with_lr(config.ppo.value_lr());
        let policy_sizes = agent.policy.param_sizes();
        let value_sizes = agent.value_env.param_sizes();
        Ok(Self {
            env,
            policy_env_opt: AdamState::new(policy_lr, &policy_sizes),
            policy_guidance_opt: AdamState::new(policy_lr, &policy_sizes),
            value_env_opt: AdamState::new(value_lr, &value_sizes),
            value_guidance_opt: AdamState::new(value_lr, &value_sizes),
            agent,
            config,
            demos,
            seed,
            iteration: 0,
            rollout_rng: stream_rng(seed, STREAM_ROLLOUT),
            env_shuffle_rng: stream_rng(seed, STREAM_ENV_SHUFFLE),
            guidance_shuffle_rng: stream_rng(seed, STREAM_GUIDANCE_SHUFFLE),
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn demos(&self) -> Option<&DemoSet> {
        self.demos.as_ref()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn checkpoint_meta(&self, algorithm: Algorithm) -> CheckpointMeta {
        CheckpointMeta {
            env_id: self.env.id().to_string(),
            algorithm,
            seed: self.seed,
            iteration: self.iteration,
            action_space: self.env.action_space(),
            obs_scale: self.agent.obs_scale.clone(),
            log_std: self.agent.policy.log_std.clone(),
        }
    }

    pub fn step(&mut self, algorithm: Algorithm) -> Result<IterationMetrics> {
        match algorithm {
            Algorithm::Posg => self.posg_iteration(),
            Algorithm::Ppo => self.ppo_iteration(),
        }
    }

    fn collect(&mut self) -> Result<Vec<Trajectory>> {
        let episodes = self.config.ppo.episodes_per_iteration;
        let actor = self.agent.actor(false);
        collect_rollouts(self.env.as_mut(), &actor, episodes, &mut self.rollout_rng)
    }

    fn demo_features(&self) -> Result<Option<Vec<PointSet>>> {
        self.demos
            .as_ref()
            .map(|d| d.features(&self.config.guidance.distance.features))
            .transpose()
    }

    fn mean_distance(&self, trajectories: &[Trajectory]) -> Result<f64> {
        match self.demo_features()? {
            None => Ok(f64::NAN),
            Some(features) => {
                let d = &self.config.guidance.distance;
                let ds = trajectories
                    .iter()
                    .map(|t| d.distance(t, &features).map(|(v, _)| v))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(ds))
            }
        }
    }

    /// First update step, on environment rewards. A batch without a single
    /// non-zero reward carries no learning signal, only value-estimation
    /// noise that standardization would blow up to unit scale, so it is
    /// skipped.
    fn env_update(&mut self, trajectories: &[Trajectory], layout: &BatchLayout) -> Result<UpdateStats> {
        let cfg = &self.config.ppo;
        let rewards: Vec<f64> = trajectories.iter().flat_map(|t| t.steps().iter().map(|s| s.reward)).collect();
        if rewards.iter().all(|&r| r == 0.0) {
            return Ok(UpdateStats::default());
        }
        let (values, ends) = layout.values_and_ends(trajectories, &self.agent.value_env)?;
        let (adv, returns) = compute_gae(&rewards, &values, &ends, cfg.gamma, cfg.gae_lambda)?;
        let batch = PpoBatch {
            inputs: layout.inputs.clone(),
            actions: trajectories.iter().flat_map(|t| t.steps().iter().map(|s| s.action.clone())).collect(),
            old_log_probs: trajectories.iter().flat_map(|t| t.steps().iter().map(|s| s.log_prob)).collect(),
            advantages: standardize(&adv),
            returns,
        };
        ppo_update(
            &mut self.agent.policy,
            &mut self.policy_env_opt,
            &mut self.agent.value_env,
            &mut self.value_env_opt,
            &batch,
            cfg,
            &mut self.env_shuffle_rng,
        )
        .map_err(|e| e.context("environment-reward update"))
    }

    /// Second update step on standardized guidance rewards. Log-probs are
    /// re-evaluated under the policy left by the first step so the clip
    /// region is centred on it.
    fn guidance_update(
        &mut self,
        trajectories: &[Trajectory],
        layout: &BatchLayout,
        raw_rewards: &[f64],
    ) -> Result<UpdateStats> {
        let cfg = &self.config.ppo;
        let gamma_i = self.config.guidance.resolved_gamma(cfg.gamma);
        let rewards = standardize(raw_rewards);
        let (values, ends) = layout.values_and_ends(trajectories, &self.agent.value_guidance)?;
        let (adv, returns) = compute_gae(&rewards, &values, &ends, gamma_i, cfg.gae_lambda)?;
        let actions: Vec<_> = trajectories.iter().flat_map(|t| t.steps().iter().map(|s| s.action.clone())).collect();
        let out = self.agent.policy.net.forward_batch(layout.inputs.view())?;
        let old_log_probs = actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let row = out.output().row(i);
                Ok(self.agent.policy.terms(row.as_slice().expect("contiguous row"), a)?.log_prob)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = PpoBatch {
            inputs: layout.inputs.clone(),
            actions,
            old_log_probs,
            advantages: standardize(&adv),
            returns,
        };
        ppo_update(
            &mut self.agent.policy,
            &mut self.policy_guidance_opt,
            &mut self.agent.value_guidance,
            &mut self.value_guidance_opt,
            &batch,
            cfg,
            &mut self.guidance_shuffle_rng,
        )
        .map_err(|e| e.context("guidance-reward update"))
    }

    fn base_metrics(&self, trajectories: &[Trajectory], env: &UpdateStats, mmd: f64) -> IterationMetrics {
        IterationMetrics {
            iteration: self.iteration,
            success_rate: mean(trajectories.iter().map(|t| if t.success() { 1.0 } else { 0.0 })),
            mean_return: mean(trajectories.iter().map(Trajectory::return_value)),
            mean_mmd_to_demos: mmd,
            surrogate_loss: -env.surrogate,
            value_loss: env.value_loss,
            clip_fraction: env.clip_fraction,
            approx_kl: env.approx_kl,
            guidance_surrogate_loss: 0.0,
            guidance_value_loss: 0.0,
            mean_guidance_reward: 0.0,
            demo_count: self.demos.as_ref().map_or(0, DemoSet::len),
        }
    }

    /// Plain PPO on environment rewards only.
    pub fn ppo_iteration(&mut self) -> Result<IterationMetrics> {
        self.iteration += 1;
        let trajectories = self.collect()?;
        let mmd = self.mean_distance(&trajectories)?;
        let layout = BatchLayout::new(&trajectories, &self.agent.obs_scale);
        let env_stats = self.env_update(&trajectories, &layout)?;
        Ok(self.base_metrics(&trajectories, &env_stats, mmd))
    }

    /// Collect, weight the buffer against the demos, derive guidance
    /// rewards, update on environment rewards then on guidance rewards, and
    /// finally refresh the demo memory.
    /// With guidance disabled this is exactly [`Trainer::ppo_iteration`].
    pub fn posg_iteration(&mut self) -> Result<IterationMetrics> {
        if self.demos.is_none() {
            return Err(Error::Config("guided training needs a demonstration set".into()));
        }
        if !self.config.guidance.enabled {
            return self.ppo_iteration();
        }
        self.iteration += 1;
        let trajectories = self.collect()?;
        let demos = self.demos.as_ref().expect("checked above");
        let gcfg = &self.config.guidance;
        let weighted = compute_weights(&trajectories, demos, &gcfg.params, &gcfg.distance)?;
        let mmd = weighted.mean_distance();
        let (per_traj, _) = guidance_rewards(&weighted, demos, &gcfg.params)?;
        let raw: Vec<f64> = per_traj.into_iter().flatten().collect();

        let layout = BatchLayout::new(&trajectories, &self.agent.obs_scale);
        let env_stats = self.env_update(&trajectories, &layout)?;
        let mut metrics = self.base_metrics(&trajectories, &env_stats, mmd);
        metrics.mean_guidance_reward = mean(raw.iter().copied());

        if raw.iter().any(|&r| r != 0.0) {
            let g = self.guidance_update(&trajectories, &layout, &raw)?;
            metrics.guidance_surrogate_loss = -g.surrogate;
            metrics.guidance_value_loss = g.value_loss;
        }
        if self.config.guidance.update_demos {
            let demos = self.demos.as_mut().expect("checked above");
            for t in trajectories.iter().filter(|t| t.success()) {
                demos.update(t);
            }
        }
        if !self.agent.is_finite() {
            return Err(Error::Divergence(format!("parameters non-finite after iteration {}", self.iteration)));
        }
        Ok(metrics)
    }
}
