//! Clipped-surrogate PPO: rollout collection, GAE, and the minibatch update.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, Env};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamState, DenseNet};
use crate::policy::Policy;
use crate::trajectory::{Step, Trajectory};

const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub value_learning_rate: Option<f64>,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Episodes collected per update (K).
    pub episodes_per_iteration: usize,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 10,
            minibatch_size: 64,
            learning_rate: 3e-4,
            value_learning_rate: None,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            episodes_per_iteration: 16,
            hidden: vec![64, 64],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_ratio > 0.0) {
            return bad(format!("clip_ratio must be positive, got {}", self.clip_ratio));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_iteration == 0 {
            return bad("epochs, minibatch_size and episodes_per_iteration must be positive".into());
        }
        if !(self.learning_rate > 0.0) || self.value_learning_rate.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0 && self.max_grad_norm >= 0.0) {
            return bad("entropy_coef, value_coef and max_grad_norm must be non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn value_lr(&self) -> f64 {
        self.value_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// How a step relates to the end of its episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEnd {
    Continue,
    /// Goal reached: bootstrap from 0.
    Terminal,
    /// Time limit: bootstrap from the value of the final observation.
    Truncated { bootstrap_value: f64 },
}

/// Generalized advantage estimation over a flattened batch. Returns
/// `(advantages, returns_to_go)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    ends: &[StepEnd],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || ends.len() != n {
        return Err(Error::Malformed(format!(
            "GAE inputs differ in length: {} rewards, {} values, {} ends",
            n,
            values.len(),
            ends.len()
        )));
    }
    if matches!(ends.last(), Some(StepEnd::Continue)) {
        return Err(Error::Malformed("batch ends in the middle of an episode".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (delta, carry) = match ends[t] {
            StepEnd::Terminal => (rewards[t] - values[t], 0.0),
            StepEnd::Truncated { bootstrap_value } => {
                (rewards[t] + gamma * bootstrap_value - values[t], 0.0)
            }
            StepEnd::Continue => (rewards[t] + gamma * values[t + 1] - values[t], running),
        };
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Zero-mean, unit-variance copy (population std plus a small ε).
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    xs.iter().map(|x| (x - mean) / (std + STD_EPS)).collect()
}

/// Clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)` and its derivative with
/// respect to the ratio `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

/// Everything one PPO update consumes. `inputs` are the scaled
/// observations, one per row.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    pub inputs: Array2<f64>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.actions.len();
        if self.inputs.nrows() != n
            || self.old_log_probs.len() != n
            || self.advantages.len() != n
            || self.returns.len() != n
        {
            return Err(Error::Malformed("PPO batch columns differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Malformed("PPO batch is empty".into()));
        }
        if self.old_log_probs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Divergence("non-finite behaviour log-probability".into()));
        }
        Ok(())
    }
}

/// Averages over all minibatches of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Surrogate statistics and policy gradients for one minibatch.
pub struct PolicyGradient {
    pub stats: UpdateStats,
    /// Gradient of the loss (negated objective) per parameter tensor, in
    /// [`Policy::params_mut`] order.
    pub grads: Vec<Vec<f64>>,
}

/// Loss `−mean(surrogate) − c_H·mean(entropy)` and its gradient.
pub fn policy_loss_grad(
    policy: &Policy,
    inputs: &Array2<f64>,
    actions: &[Action],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
    entropy_coef: f64,
) -> Result<PolicyGradient> {
    let b = actions.len();
    let cache = policy.net.forward_batch(inputs.view())?;
    let out = cache.output();
    let mut d_out = Array2::<f64>::zeros(out.raw_dim());
    let n_logstd = policy.log_std.as_ref().map_or(0, Vec::len);
    let mut d_logstd = vec![0.0; n_logstd];
    let mut stats = UpdateStats::default();
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let row = out.row(i);
        let terms = policy.terms(row.as_slice().expect("contiguous row"), &actions[i])?;
        let log_ratio = terms.log_prob - old_log_probs[i];
        let ratio = log_ratio.exp();
        let (surr, dsurr_dratio) = clipped_surrogate(ratio, advantages[i], clip);
        if !surr.is_finite() {
            return Err(Error::Divergence("non-finite surrogate".into()));
        }
        stats.surrogate += surr * inv_b;
        stats.entropy += terms.entropy * inv_b;
        stats.approx_kl += -log_ratio * inv_b;
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += inv_b;
        }
        // d(surr)/d(logp) = d(surr)/d(r) · r
        let g_logp = dsurr_dratio * ratio;
        let mut drow = d_out.row_mut(i);
        for j in 0..drow.len() {
            drow[j] = -inv_b * (g_logp * terms.dlogp_dout[j] + entropy_coef * terms.dent_dout[j]);
        }
        for j in 0..n_logstd {
            d_logstd[j] -= inv_b * (g_logp * terms.dlogp_dlogstd[j] + entropy_coef * terms.dent_dlogstd[j]);
        }
    }
    let net_grads = policy.net.backward(&cache, d_out.view())?;
    let mut grads: Vec<Vec<f64>> = net_grads.slices().into_iter().map(<[f64]>::to_vec).collect();
    if policy.log_std.is_some() {
        grads.push(d_logstd);
    }
    Ok(PolicyGradient { stats, grads })
}

/// Value regression loss `c_V·mean((v − R)²)/2`; returns the plain MSE and the
/// gradients.
pub fn value_loss_grad(
    value: &DenseNet,
    inputs: &Array2<f64>,
    returns: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let cache = value.forward_batch(inputs.view())?;
    let v = cache.output();
    let b = returns.len() as f64;
    let mut mse = 0.0;
    let mut d_out = Array2::<f64>::zeros(v.raw_dim());
    for (i, r) in returns.iter().enumerate() {
        let err = v[[i, 0]] - r;
        mse += err * err / b;
        d_out[[i, 0]] = value_coef * err / b;
    }
    if !mse.is_finite() {
        return Err(Error::Divergence("non-finite value loss".into()));
    }
    let grads = value.backward(&cache, d_out.view())?;
    Ok((mse, grads.slices().into_iter().map(<[f64]>::to_vec).collect()))
}

fn apply(opt: &mut AdamState, params: &mut [&mut [f64]], grads: &mut [Vec<f64>], max_norm: f64) -> Result<()> {
    let mut views: Vec<&mut [f64]> = grads.iter_mut().map(Vec::as_mut_slice).collect();
    let norm = clip_grad_norm(&mut views, max_norm);
    if !norm.is_finite() {
        return Err(Error::Divergence("non-finite gradient norm".into()));
    }
    let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    opt.step(params, &views)
}

/// Epochs × shuffled minibatches of clipped-surrogate ascent plus value
/// regression. Advantages must already be standardized.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    policy_opt: &mut AdamState,
    value: &mut DenseNet,
    value_opt: &mut AdamState,
    batch: &PpoBatch,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    batch.check()?;
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = UpdateStats::default();
    let mut count = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch_size) {
            let inputs = batch.inputs.select(Axis(0), idx);
            let actions: Vec<Action> = idx.iter().map(|&i| batch.actions[i].clone()).collect();
            let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
            let adv: Vec<f64> = idx.iter().map(|&i| batch.advantages[i]).collect();
            let ret: Vec<f64> = idx.iter().map(|&i| batch.returns[i]).collect();

            let mut pg = policy_loss_grad(
                policy,
                &inputs,
                &actions,
                &old,
                &adv,
                config.clip_ratio,
                config.entropy_coef,
            )?;
            apply(policy_opt, &mut policy.params_mut(), &mut pg.grads, config.max_grad_norm)?;

            let (mse, mut vg) = value_loss_grad(value, &inputs, &ret, config.value_coef)?;
            apply(value_opt, &mut value.params_mut(), &mut vg, config.max_grad_norm)?;

            if !policy.is_finite() || !value.is_finite() {
                return Err(Error::Divergence("parameters became non-finite".into()));
            }
            total.surrogate += pg.stats.surrogate;
            total.entropy += pg.stats.entropy;
            total.approx_kl += pg.stats.approx_kl;
            total.clip_fraction += pg.stats.clip_fraction;
            total.value_loss += mse;
            count += 1;
        }
    }
    let k = 1.0 / count as f64;
    Ok(UpdateStats {
        surrogate: total.surrogate * k,
        value_loss: total.value_loss * k,
        entropy: total.entropy * k,
        approx_kl: total.approx_kl * k,
        clip_fraction: total.clip_fraction * k,
    })
}

/// Something that picks actions from raw observations.
pub trait Actor {
    fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> (Action, f64);
}

/// Policy plus the observation scaling applied in front of it.
#[derive(Debug, Clone, Copy)]
pub struct ScaledPolicy<'a> {
    pub policy: &'a Policy,
    pub scale: &'a [f64],
    pub greedy: bool,
}

pub fn scale_observation(observation: &[f64], scale: &[f64]) -> Vec<f64> {
    observation.iter().zip(scale).map(|(o, s)| o * s).collect()
}

impl Actor for ScaledPolicy<'_> {
    fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> (Action, f64) {
        let input = scale_observation(observation, self.scale);
        if self.greedy {
            (self.policy.greedy(&input), 0.0)
        } else {
            self.policy.sample(&input, rng)
        }
    }
}

/// Run `episodes` complete episodes.
pub fn collect_rollouts<A: Actor, R: Rng + ?Sized>(
    env: &mut dyn Env,
    actor: &A,
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut obs = env.reset();
        let mut steps = Vec::new();
        loop {
            let (action, log_prob) = actor.act(&obs, rng);
            let outcome = env
                .step(&action)
                .map_err(|e| e.context(format_args!("episode {ep}, step {}", steps.len())))?;
            steps.push(Step { observation: obs, action, reward: outcome.reward, log_prob });
            obs = outcome.observation;
            if outcome.terminated || outcome.truncated {
                out.push(Trajectory::new(steps, obs, outcome.terminated)?);
                break;
            }
        }
    }
    Ok(out)
}
