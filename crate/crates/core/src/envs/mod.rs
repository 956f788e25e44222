//! Environments: the Key-Door-Treasure grid world and a sparse point-mass
//! navigation task.

mod kdt;
mod point_mass;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kdt::{Cell, KdtEnv, KdtLayout, KdtMove, KdtState, KDT_TREASURE_REWARD};
pub use point_mass::{PointMassConfig, PointMassEnv, PointMassState, POINT_MASS_GOAL_REWARD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete(usize),
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the policy network output for this space.
    pub fn policy_outputs(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete_index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Goal reached; nothing to bootstrap from.
    pub terminated: bool,
    /// Time limit hit; the episode was cut short.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A deterministic episodic environment.
pub trait Env: Send {
    fn id(&self) -> &str;
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;
    /// Whether observations are integral and can key a lookup table.
    fn discrete_observations(&self) -> bool;
    /// Per-component multiplier applied to observations before they reach a
    /// network.
    fn observation_scale(&self) -> Vec<f64>;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;
}

/// Named environment presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvPreset {
    /// Full-size 26×36 Key-Door-Treasure, 240-step episodes.
    #[serde(rename = "kdt")]
    Kdt,
    /// 13×18 Key-Door-Treasure, 120-step episodes.
    #[serde(rename = "kdt-small")]
    KdtSmall,
    #[serde(rename = "point-mass")]
    PointMass,
}

impl EnvPreset {
    pub const ALL: [EnvPreset; 3] = [EnvPreset::Kdt, EnvPreset::KdtSmall, EnvPreset::PointMass];

    pub fn id(&self) -> &'static str {
        match self {
            EnvPreset::Kdt => "kdt",
            EnvPreset::KdtSmall => "kdt-small",
            EnvPreset::PointMass => "point-mass",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment preset `{s}`")))
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, EnvPreset::PointMass)
    }

    pub fn kdt_layout(&self) -> Option<KdtLayout> {
        match self {
            EnvPreset::Kdt => Some(KdtLayout::full()),
            EnvPreset::KdtSmall => Some(KdtLayout::small()),
            EnvPreset::PointMass => None,
        }
    }

    pub fn build(&self) -> Box<dyn Env> {
        match self {
            EnvPreset::Kdt | EnvPreset::KdtSmall => {
                Box::new(KdtEnv::new(self.kdt_layout().expect("grid preset"), self.id()))
            }
            EnvPreset::PointMass => Box::new(PointMassEnv::new(PointMassConfig::default())),
        }
    }
}
