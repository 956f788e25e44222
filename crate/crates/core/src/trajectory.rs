use crate::envs::Action;
use crate::error::{Error, Result};
use crate::kernel::{traj_features, FeatureMap, PointSet};

/// One environment interaction as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Observation the action was chosen from.
    pub observation: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// Log-probability of `action` under the behaviour policy.
    pub log_prob: f64,
}

/// A complete episode collected by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<Step>,
    return_: f64,
    final_observation: Vec<f64>,
    terminated: bool,
}

impl Trajectory {
    /// `final_observation` is the observation after the last step; it is the
    /// bootstrap point when the episode was truncated.
    pub fn new(steps: Vec<Step>, final_observation: Vec<f64>, terminated: bool) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Malformed("trajectory must contain at least one step".into()));
        }
        let return_ = steps.iter().map(|s| s.reward).sum();
        Ok(Self { steps, return_, final_observation, terminated })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Undiscounted sum of environment rewards.
    pub fn return_value(&self) -> f64 {
        self.return_
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    /// Reached the goal (both environments only terminate there).
    pub fn success(&self) -> bool {
        self.terminated
    }

    pub fn final_observation(&self) -> &[f64] {
        &self.final_observation
    }

    pub fn observations(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.observation.as_slice())
    }

    pub fn features(&self, g: &FeatureMap) -> Result<PointSet> {
        let obs: Vec<&[f64]> = self.observations().collect();
        traj_features(&obs, g)
    }
}
