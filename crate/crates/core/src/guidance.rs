//! Smooth guidance rewards.
//!
//! Every trajectory in the current rollout buffer gets a weight
//! `ω̂(τ) = exp(−k·d(τ)) / (Σ_υ exp(−k·d(υ)) + ε)` from its MMD distance
//! `d(τ)` to the closest demonstration, a joint return
//! `R_j(τ) = α·R(τ) + β·R(τ_E)` mixing its own return with that of the
//! closest demonstration, and an importance `I(τ) = ω̂(τ)·R_j(τ)`.
//!
//! In discrete spaces the guidance reward of a state-action pair is the mean
//! importance over the buffer trajectories that contain it. In continuous
//! spaces each trajectory spreads its own importance evenly over its steps.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::Action;
use crate::error::{Error, Result};
use crate::kernel::{dist_to_demoset, traj_features, FeatureMap, KernelSpec, PointSet, DEFAULT_MAX_POINTS};
use crate::trajectory::Trajectory;

/// A state-only demonstration: observations and a return, never actions.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoTrajectory {
    observations: Vec<Vec<f64>>,
    return_: f64,
}

impl DemoTrajectory {
    pub fn new(observations: Vec<Vec<f64>>, return_: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Malformed("demonstration has no observations".into()));
        }
        if !return_.is_finite() {
            return Err(Error::Malformed("demonstration return is not finite".into()));
        }
        Ok(Self { observations, return_ })
    }

    /// Drop everything but the observations and the return.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            observations: traj.observations().map(<[f64]>::to_vec).collect(),
            return_: traj.return_value(),
        }
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    pub fn return_value(&self) -> f64 {
        self.return_
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn features(&self, g: &FeatureMap) -> Result<PointSet> {
        traj_features(&self.observations, g)
    }
}

/// The demonstration memory M_E: at most `capacity` demos, sorted by
/// descending return (ties keep insertion order).
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    demos: Vec<DemoTrajectory>,
    capacity: usize,
}

impl DemoSet {
    /// Keeps the best `capacity` demos if more are supplied.
    pub fn new(demos: Vec<DemoTrajectory>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("demo capacity must be positive".into()));
        }
        if demos.is_empty() {
            return Err(Error::Config("demonstration set is empty".into()));
        }
        let mut demos = demos;
        demos.sort_by(|a, b| b.return_.total_cmp(&a.return_));
        demos.truncate(capacity);
        Ok(Self { demos, capacity })
    }

    pub fn demos(&self) -> &[DemoTrajectory] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&DemoTrajectory> {
        self.demos.get(i)
    }

    pub fn min_return(&self) -> f64 {
        self.demos.last().map_or(f64::NEG_INFINITY, |d| d.return_)
    }

    /// Offer a finished episode to the memory. It is stripped to a
    /// state-only demo and inserted if the set has room or its return
    /// strictly beats the current worst demo, which is then evicted.
    /// Returns whether the candidate went in.
    pub fn update(&mut self, candidate: &Trajectory) -> bool {
        let full = self.demos.len() >= self.capacity;
        if full && candidate.return_value() <= self.min_return() {
            return false;
        }
        let demo = DemoTrajectory::from_trajectory(candidate);
        let pos = self.demos.partition_point(|d| d.return_ >= demo.return_);
        self.demos.insert(pos, demo);
        if self.demos.len() > self.capacity {
            self.demos.pop();
        }
        true
    }

    pub fn features(&self, g: &FeatureMap) -> Result<Vec<PointSet>> {
        self.demos.iter().map(|d| d.features(g)).collect()
    }
}

/// How trajectories are compared with demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub kernel: KernelSpec,
    pub features: FeatureMap,
    pub max_points: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::median_heuristic(),
            features: FeatureMap::Identity,
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

impl DistanceConfig {
    /// D(τ, M_E) for an agent trajectory against precomputed demo features.
    pub fn distance(&self, traj: &Trajectory, demo_features: &[PointSet]) -> Result<(f64, usize)> {
        let f = traj.features(&self.features)?;
        dist_to_demoset(&f, demo_features, &self.kernel, self.max_points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Table of per state-action importance lists (grid worlds).
    DiscreteTable,
    /// One importance per trajectory, spread over its steps.
    ContinuousPerTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceParams {
    pub k_temp: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: GuidanceMode,
    /// Key the discrete table on the observation alone rather than the
    /// (observation, action) pair.
    pub key_on_state_only: bool,
}

impl GuidanceParams {
    pub fn new(k_temp: f64, epsilon: f64, alpha: f64, mode: GuidanceMode) -> Result<Self> {
        let p = Self { k_temp, epsilon, alpha, beta: 1.0 - alpha, mode, key_on_state_only: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_temp > 0.0 && self.k_temp.is_finite()) {
            return Err(Error::Config(format!("k_temp must be positive, got {}", self.k_temp)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "alpha + beta must equal 1, got {} + {}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            k_temp: 5.0,
            epsilon: 1e-8,
            alpha: 0.5,
            beta: 0.5,
            mode: GuidanceMode::DiscreteTable,
            key_on_state_only: false,
        }
    }
}

/// The current rollout buffer together with each trajectory's distance to
/// the demo set, its nearest demo, and its normalized weight ω̂.
#[derive(Debug, Clone)]
pub struct WeightedBuffer<'a> {
    pub trajectories: &'a [Trajectory],
    pub distances: Vec<f64>,
    pub nearest: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightedBuffer<'_> {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    /// I(τ) for every trajectory, in buffer order.
    pub fn importances(&self, demos: &DemoSet, params: &GuidanceParams) -> Vec<f64> {
        self.trajectories
            .iter()
            .zip(&self.weights)
            .zip(&self.nearest)
            .map(|((traj, &w), &near)| {
                let demo_ret = demos.demos()[near].return_value();
                trajectory_importance(w, joint_return(traj.return_value(), demo_ret, params))
            })
            .collect()
    }
}

/// ω̂ from raw distances: `exp(−k·d) / (Σ exp(−k·d) + ε)`.
pub fn normalized_weights(distances: &[f64], k_temp: f64, epsilon: f64) -> Vec<f64> {
    let raw: Vec<f64> = distances.iter().map(|&d| (-k_temp * d).exp()).collect();
    let total: f64 = raw.iter().sum::<f64>() + epsilon;
    raw.into_iter().map(|r| r / total).collect()
}

/// Distances, nearest demos and normalized weights over exactly `buffer`.
pub fn compute_weights<'a>(
    buffer: &'a [Trajectory],
    demos: &DemoSet,
    params: &GuidanceParams,
    distance: &DistanceConfig,
) -> Result<WeightedBuffer<'a>> {
    if buffer.is_empty() {
        return Err(Error::Config("rollout buffer is empty".into()));
    }
    let demo_features = demos.features(&distance.features)?;
    let pairs: Vec<(f64, usize)> = buffer
        .par_iter()
        .map(|t| distance.distance(t, &demo_features))
        .collect::<Result<_>>()?;
    let (distances, nearest): (Vec<f64>, Vec<usize>) = pairs.into_iter().unzip();
    let weights = normalized_weights(&distances, params.k_temp, params.epsilon);
    Ok(WeightedBuffer { trajectories: buffer, distances, nearest, weights })
}

/// R_j = α·R(τ) + β·R(τ_E).
pub fn joint_return(traj_return: f64, nearest_demo_return: f64, params: &GuidanceParams) -> f64 {
    params.alpha * traj_return + params.beta * nearest_demo_return
}

/// I(τ) = ω̂(τ)·R_j(τ).
pub fn trajectory_importance(weight: f64, joint_return: f64) -> f64 {
    weight * joint_return
}

/// Lookup key of the discrete importance table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateActionKey {
    pub state: Vec<i64>,
    pub action: Option<usize>,
}

impl StateActionKey {
    pub fn new(observation: &[f64], action: &Action, state_only: bool) -> Result<Self> {
        let state = observation
            .iter()
            .map(|&v| {
                if v.is_finite() && v.fract() == 0.0 {
                    Ok(v as i64)
                } else {
                    Err(Error::Config(format!(
                        "observation component {v} is not discrete; use the continuous guidance mode"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let action = if state_only {
            None
        } else {
            Some(action.discrete_index().ok_or_else(|| {
                Error::Config("continuous action cannot key the discrete importance table".into())
            })?)
        };
        Ok(Self { state, action })
    }
}

/// Result of a guidance lookup; `cold` marks a key with no samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceLookup {
    pub reward: f64,
    pub cold: bool,
}

/// Map from state-action key to the importances of the trajectories that
/// visited it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportanceTable {
    entries: HashMap<StateActionKey, Vec<f64>>,
    state_only: bool,
}

impl ImportanceTable {
    pub fn new(state_only: bool) -> Self {
        Self { entries: HashMap::new(), state_only }
    }

    pub fn state_only(&self) -> bool {
        self.state_only
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn samples(&self, key: &StateActionKey) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn key_for(&self, observation: &[f64], action: &Action) -> Result<StateActionKey> {
        StateActionKey::new(observation, action, self.state_only)
    }

    /// Append each trajectory's importance once for every distinct key it
    /// visits.
    pub fn accumulate(&mut self, trajectories: &[Trajectory], importances: &[f64]) -> Result<()> {
        if trajectories.len() != importances.len() {
            return Err(Error::Malformed(format!(
                "{} trajectories but {} importances",
                trajectories.len(),
                importances.len()
            )));
        }
        for (traj, &imp) in trajectories.iter().zip(importances) {
            let mut seen = HashSet::with_capacity(traj.len());
            for step in traj.steps() {
                let key = self.key_for(&step.observation, &step.action)?;
                if seen.insert(key.clone()) {
                    self.entries.entry(key).or_default().push(imp);
                }
            }
        }
        Ok(())
    }

    /// Mean stored importance for `key`; zero and `cold` when absent.
    pub fn reward(&self, key: &StateActionKey) -> GuidanceLookup {
        match self.entries.get(key) {
            Some(list) if !list.is_empty() => GuidanceLookup {
                reward: list.iter().sum::<f64>() / list.len() as f64,
                cold: false,
            },
            _ => GuidanceLookup { reward: 0.0, cold: true },
        }
    }

    /// Per-step guidance rewards for one trajectory.
    pub fn rewards_for(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        traj.steps()
            .iter()
            .map(|s| Ok(self.reward(&self.key_for(&s.observation, &s.action)?).reward))
            .collect()
    }
}

/// Build the discrete table from one weighted buffer.
pub fn accumulate_discrete(
    table: &mut ImportanceTable,
    buffer: &WeightedBuffer<'_>,
    importances: &[f64],
) -> Result<()> {
    table.accumulate(buffer.trajectories, importances)
}

/// Continuous regime: every step of τ gets I(τ)/len(τ).
pub fn guidance_rewards_continuous(trajectories: &[Trajectory], importances: &[f64]) -> Vec<Vec<f64>> {
    trajectories
        .iter()
        .zip(importances)
        .map(|(t, &imp)| vec![imp / t.len() as f64; t.len()])
        .collect()
}

/// Per-step guidance rewards for the whole buffer in either regime, plus
/// the importances they came from.
pub fn guidance_rewards(
    weighted: &WeightedBuffer<'_>,
    demos: &DemoSet,
    params: &GuidanceParams,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let importances = weighted.importances(demos, params);
    let rewards = match params.mode {
        GuidanceMode::DiscreteTable => {
            let mut table = ImportanceTable::new(params.key_on_state_only);
            accumulate_discrete(&mut table, weighted, &importances)?;
            weighted
                .trajectories
                .iter()
                .map(|t| table.rewards_for(t))
                .collect::<Result<Vec<_>>>()?
        }
        GuidanceMode::ContinuousPerTrajectory => {
            guidance_rewards_continuous(weighted.trajectories, &importances)
        }
    };
    Ok((rewards, importances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Step;

    fn traj(cells: &[(f64, f64, usize)], ret: f64) -> Trajectory {
        let n = cells.len();
        let steps = cells
            .iter()
            .enumerate()
            .map(|(i, &(r, c, a))| Step {
                observation: vec![r, c],
                action: Action::Discrete(a),
                reward: if i + 1 == n { ret } else { 0.0 },
                log_prob: 0.0,
            })
            .collect();
        Trajectory::new(steps, vec![0.0, 0.0], ret > 0.0).unwrap()
    }

    fn demo(ret: f64) -> DemoTrajectory {
        DemoTrajectory::new(vec![vec![0.0, 0.0]], ret).unwrap()
    }

    #[test]
    fn weights_two_trajectories() {
        let k = 5.0;
        let w = normalized_weights(&[0.0, std::f64::consts::LN_2 / k], k, 0.0);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(normalized_weights(&[0.7], k, 0.0), vec![1.0]);
        let uniform = normalized_weights(&[0.0; 4], k, 0.0);
        assert!(uniform.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn compute_weights_needs_trajectories() {
        let demos = DemoSet::new(vec![demo(200.0)], 10).unwrap();
        let err = compute_weights(&[], &demos, &GuidanceParams::default(), &DistanceConfig::default());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn joint_return_and_importance() {
        let half = GuidanceParams::default();
        assert_eq!(joint_return(0.0, 200.0, &half), 100.0);
        let own = GuidanceParams { alpha: 1.0, beta: 0.0, ..half };
        assert_eq!(joint_return(37.0, 200.0, &own), 37.0);
        let mixed = GuidanceParams { alpha: 0.3, beta: 0.7, ..half };
        assert!((joint_return(50.0, 200.0, &mixed) - 155.0).abs() < 1e-12);
        assert!((trajectory_importance(2.0 / 3.0, 100.0) - 66.667).abs() < 1e-3);
        assert_eq!(trajectory_importance(0.0, 100.0), 0.0);
        assert_eq!(trajectory_importance(1.0 / 3.0, 0.0), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(GuidanceParams::new(5.0, 0.0, 0.5, GuidanceMode::DiscreteTable).is_ok());
        let bad = GuidanceParams { alpha: 0.5, beta: 0.6, ..GuidanceParams::default() };
        assert!(bad.validate().is_err());
        assert!(GuidanceParams::new(0.0, 0.0, 0.5, GuidanceMode::DiscreteTable).is_err());
        assert!(GuidanceParams::new(1.0, -1.0, 0.5, GuidanceMode::DiscreteTable).is_err());
    }

    #[test]
    fn table_accumulation() {
        let a = traj(&[(0.0, 0.0, 0), (0.0, 1.0, 1)], 0.0);
        let mut table = ImportanceTable::new(false);
        table.accumulate(std::slice::from_ref(&a), &[5.0]).unwrap();
        let ka = table.key_for(&[0.0, 0.0], &Action::Discrete(0)).unwrap();
        let kb = table.key_for(&[0.0, 1.0], &Action::Discrete(1)).unwrap();
        assert_eq!(table.samples(&ka), Some(&[5.0][..]));
        assert_eq!(table.samples(&kb), Some(&[5.0][..]));
        assert_eq!(table.reward(&ka), GuidanceLookup { reward: 5.0, cold: false });

        let mut two = ImportanceTable::new(false);
        let b = traj(&[(0.0, 0.0, 0)], 0.0);
        two.accumulate(&[a.clone(), b], &[66.67, 0.0]).unwrap();
        assert_eq!(two.samples(&ka), Some(&[66.67, 0.0][..]));
        assert!((two.reward(&ka).reward - 33.335).abs() < 1e-12);

        let repeat = traj(&[(0.0, 0.0, 0), (0.0, 0.0, 0)], 0.0);
        let mut once = ImportanceTable::new(false);
        once.accumulate(&[repeat], &[5.0]).unwrap();
        assert_eq!(once.samples(&ka), Some(&[5.0][..]));

        let cold = once.reward(&kb);
        assert_eq!(cold, GuidanceLookup { reward: 0.0, cold: true });
    }

    #[test]
    fn state_only_keys_merge_actions() {
        let t = traj(&[(0.0, 0.0, 0), (0.0, 0.0, 1)], 0.0);
        let mut table = ImportanceTable::new(true);
        table.accumulate(&[t], &[3.0]).unwrap();
        assert_eq!(table.len(), 1);
    }

    #[test]
    fn continuous_observations_rejected_in_table() {
        let key = StateActionKey::new(&[0.5, 1.0], &Action::Discrete(0), false);
        assert!(matches!(key, Err(Error::Config(_))));
        let key = StateActionKey::new(&[1.0], &Action::Continuous(vec![0.1]), false);
        assert!(matches!(key, Err(Error::Config(_))));
    }

    #[test]
    fn continuous_rewards_split_evenly() {
        let cells: Vec<_> = (0..100).map(|i| (i as f64, 0.0, 0)).collect();
        let long = traj(&cells, 0.0);
        let short = traj(&cells[..4], 0.0);
        let r = guidance_rewards_continuous(&[long, short], &[66.67, 0.0]);
        assert!(r[0].iter().all(|&x| (x - 0.6667).abs() < 1e-12));
        assert!(r[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn demo_set_update_rules() {
        let mut set = DemoSet::new(vec![demo(100.0)], 2).unwrap();
        assert!(set.update(&traj(&[(1.0, 1.0, 0)], 0.0)));
        assert_eq!(set.len(), 2);
        // Full with min 0: equal return never evicts.
        assert!(!set.update(&traj(&[(2.0, 2.0, 0)], 0.0)));
        assert!(set.update(&traj(&[(3.0, 3.0, 0)], 150.0)));
        let rets: Vec<f64> = set.demos().iter().map(|d| d.return_value()).collect();
        assert_eq!(rets, vec![150.0, 100.0]);
        assert!(!set.update(&traj(&[(3.0, 3.0, 0)], 100.0)));

        let mut fill = DemoSet::new(vec![demo(200.0)], 10).unwrap();
        assert!(fill.update(&traj(&[(3.0, 3.0, 0)], 0.0)));

        // Ties keep insertion order.
        let mut ties = DemoSet::new(vec![demo(5.0)], 3).unwrap();
        ties.update(&traj(&[(7.0, 7.0, 0)], 5.0));
        assert_eq!(ties.demos()[1].observations()[0], vec![7.0, 7.0]);

        assert!(DemoSet::new(vec![], 3).is_err());
        assert!(DemoSet::new(vec![demo(1.0)], 0).is_err());
    }
}
