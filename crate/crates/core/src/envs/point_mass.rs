use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, Env, StepOutcome};
use crate::error::{Error, Result};

pub const POINT_MASS_GOAL_REWARD: f64 = 100.0;

/// Parameters of the sparse 2D navigation task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Arena is the square [−half_extent, half_extent]².
    pub half_extent: f64,
    pub v_max: f64,
    pub accel: f64,
    pub max_steps: usize,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            start: [-6.0, -6.0],
            goal: [6.0, 6.0],
            goal_radius: 0.5,
            half_extent: 10.0,
            v_max: 1.0,
            accel: 0.1,
            max_steps: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMassState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub step_count: usize,
}

impl PointMassState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }
}

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    config: PointMassConfig,
    state: PointMassState,
    done: bool,
}

impl PointMassEnv {
    pub fn new(config: PointMassConfig) -> Self {
        let state = PointMassState { position: config.start, velocity: [0.0; 2], step_count: 0 };
        Self { config, state, done: false }
    }

    pub fn config(&self) -> &PointMassConfig {
        &self.config
    }

    pub fn state(&self) -> &PointMassState {
        &self.state
    }

    fn at_goal(&self, p: [f64; 2]) -> bool {
        let g = self.config.goal;
        ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() < self.config.goal_radius
    }

    pub fn step_accel(&mut self, action: [f64; 2]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Env("step called after the episode finished".into()));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::Env("NaN action".into()));
        }
        let c = &self.config;
        let s = &mut self.state;
        for (v, a) in s.velocity.iter_mut().zip(action) {
            *v += c.accel * a.clamp(-1.0, 1.0);
        }
        let speed = s.velocity[0].hypot(s.velocity[1]);
        if speed > c.v_max {
            let k = c.v_max / speed;
            s.velocity.iter_mut().for_each(|v| *v *= k);
        }
        // Position is clipped to the arena; velocity is left as is, so an
        // agent pushing into a wall stays pinned until it reverses.
        for (p, v) in s.position.iter_mut().zip(s.velocity) {
            *p = (*p + v).clamp(-c.half_extent, c.half_extent);
        }
        s.step_count += 1;
        let reached = self.at_goal(self.state.position);
        let truncated = !reached && self.state.step_count >= self.config.max_steps;
        self.done = reached || truncated;
        Ok(StepOutcome {
            observation: self.state.observation(),
            reward: if reached { POINT_MASS_GOAL_REWARD } else { 0.0 },
            terminated: reached,
            truncated,
        })
    }
}

impl Env for PointMassEnv {
    fn id(&self) -> &str {
        "point-mass"
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn discrete_observations(&self) -> bool {
        false
    }

    fn observation_scale(&self) -> Vec<f64> {
        let s = 1.0 / self.config.half_extent;
        vec![s, s, 1.0 / self.config.v_max, 1.0 / self.config.v_max]
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = PointMassState {
            position: self.config.start,
            velocity: [0.0; 2],
            step_count: 0,
        };
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        match action {
            Action::Continuous(a) if a.len() == 2 => self.step_accel([a[0], a[1]]),
            Action::Continuous(a) => {
                Err(Error::Env(format!("expected a 2D action, got {} components", a.len())))
            }
            Action::Discrete(_) => Err(Error::Env("point mass takes continuous actions".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_actions_stay_put() {
        let mut env = PointMassEnv::new(PointMassConfig::default());
        env.reset();
        let mut ret = 0.0;
        loop {
            let out = env.step_accel([0.0, 0.0]).unwrap();
            ret += out.reward;
            assert_eq!(&out.observation[..2], &PointMassConfig::default().start);
            if out.done() {
                assert!(out.truncated);
                break;
            }
        }
        assert_eq!(ret, 0.0);
        assert_eq!(env.state().step_count, 500);
    }

    #[test]
    fn start_inside_goal_threshold() {
        let mut cfg = PointMassConfig::default();
        cfg.start = [cfg.goal[0] - 0.4, cfg.goal[1]];
        let mut env = PointMassEnv::new(cfg);
        env.reset();
        let out = env.step_accel([0.0, 0.0]).unwrap();
        assert_eq!(out.reward, POINT_MASS_GOAL_REWARD);
        assert!(out.terminated);
    }

    #[test]
    fn actions_are_clamped() {
        let mut a = PointMassEnv::new(PointMassConfig::default());
        let mut b = PointMassEnv::new(PointMassConfig::default());
        a.reset();
        b.reset();
        assert_eq!(a.step_accel([2.0, 0.0]).unwrap(), b.step_accel([1.0, 0.0]).unwrap());
    }

    #[test]
    fn nan_action_rejected() {
        let mut env = PointMassEnv::new(PointMassConfig::default());
        env.reset();
        assert!(matches!(env.step_accel([f64::NAN, 0.0]), Err(Error::Env(_))));
    }

    #[test]
    fn speed_and_arena_bounds() {
        let mut env = PointMassEnv::new(PointMassConfig::default());
        env.reset();
        for _ in 0..200 {
            let out = env.step_accel([-1.0, 1.0]).unwrap();
            let s = env.state();
            assert!(s.velocity[0].hypot(s.velocity[1]) <= 1.0 + 1e-12);
            assert!(s.position.iter().all(|p| p.abs() <= 10.0));
            if out.done() {
                break;
            }
        }
    }
}
