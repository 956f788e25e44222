//! Policy optimization guided by state-only demonstrations.
//!
//! Agent trajectories are compared with a small memory of demonstrations
//! using a kernel two-sample distance. The resulting per-trajectory weights
//! become dense guidance rewards, and PPO updates the policy first on the
//! sparse environment reward and then on the guidance reward.

pub mod demos;
pub mod envs;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod kernel;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod trainer;
pub mod trajectory;

pub use error::{Error, Result};
pub use trainer::{Agent, Algorithm, IterationMetrics, Trainer, TrainerConfig};
