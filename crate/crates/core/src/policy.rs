//! Stochastic policies on top of [`DenseNet`]: a categorical head for
//! discrete actions and a diagonal Gaussian with a free log-σ vector for
//! continuous ones.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::envs::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::nn::DenseNet;

/// Initial standard deviation of the Gaussian head.
pub const INITIAL_STD: f64 = 0.5;
const OUTPUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: DenseNet,
    /// Present only for continuous action spaces.
    pub log_std: Option<Vec<f64>>,
    space: ActionSpace,
}

/// Per-sample quantities needed by the surrogate loss and their derivatives
/// with respect to the network output and log-σ.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTerms {
    pub log_prob: f64,
    pub entropy: f64,
    pub dlogp_dout: Vec<f64>,
    pub dent_dout: Vec<f64>,
    pub dlogp_dlogstd: Vec<f64>,
    pub dent_dlogstd: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, space: ActionSpace, hidden: &[usize], rng: &mut R) -> Self {
        let net = DenseNet::mlp(obs_dim, hidden, space.policy_outputs(), OUTPUT_SCALE, rng);
        let log_std = match space {
            ActionSpace::Continuous(n) => Some(vec![INITIAL_STD.ln(); n]),
            ActionSpace::Discrete(_) => None,
        };
        Self { net, log_std, space }
    }

    pub fn from_parts(net: DenseNet, log_std: Option<Vec<f64>>, space: ActionSpace) -> Result<Self> {
        if net.output_dim() != space.policy_outputs() {
            return Err(Error::Malformed(format!(
                "policy network has {} outputs, action space needs {}",
                net.output_dim(),
                space.policy_outputs()
            )));
        }
        match (space, &log_std) {
            (ActionSpace::Continuous(n), Some(ls)) if ls.len() == n => {}
            (ActionSpace::Discrete(_), None) => {}
            _ => return Err(Error::Malformed("log-σ vector does not match the action space".into())),
        }
        Ok(Self { net, log_std, space })
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    /// Sample an action for an already scaled input and return its
    /// log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> (Action, f64) {
        let out = self.net.predict(input);
        match &self.log_std {
            None => {
                let logp = log_softmax(&out);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut choice = logp.len() - 1;
                for (i, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        choice = i;
                        break;
                    }
                }
                (Action::Discrete(choice), logp[choice])
            }
            Some(log_std) => {
                let a: Vec<f64> = out
                    .iter()
                    .zip(log_std)
                    .map(|(mu, ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + ls.exp() * z
                    })
                    .collect();
                let logp = gaussian_log_prob(&out, log_std, &a);
                (Action::Continuous(a), logp)
            }
        }
    }

    /// Most likely action (argmax or mean).
    pub fn greedy(&self, input: &[f64]) -> Action {
        let out = self.net.predict(input);
        match self.log_std {
            None => {
                let mut best = 0;
                for (i, v) in out.iter().enumerate() {
                    if *v > out[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Some(_) => Action::Continuous(out),
        }
    }

    /// Log-probability, entropy and their gradients for one network output
    /// row and action.
    pub fn terms(&self, out: &[f64], action: &Action) -> Result<SampleTerms> {
        match (&self.log_std, action) {
            (None, Action::Discrete(a)) => {
                let a = *a;
                if a >= out.len() {
                    return Err(Error::Malformed(format!("action {a} out of range")));
                }
                let logp = log_softmax(out);
                let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                let entropy = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                let dlogp_dout = p
                    .iter()
                    .enumerate()
                    .map(|(j, pj)| if j == a { 1.0 - pj } else { -pj })
                    .collect();
                let dent_dout = p.iter().zip(&logp).map(|(pj, lj)| -pj * (lj + entropy)).collect();
                Ok(SampleTerms {
                    log_prob: logp[a],
                    entropy,
                    dlogp_dout,
                    dent_dout,
                    dlogp_dlogstd: Vec::new(),
                    dent_dlogstd: Vec::new(),
                })
            }
            (Some(log_std), Action::Continuous(a)) => {
                if a.len() != out.len() {
                    return Err(Error::Malformed("action dimension mismatch".into()));
                }
                let n = a.len();
                let mut dlogp_dout = Vec::with_capacity(n);
                let mut dlogp_dlogstd = Vec::with_capacity(n);
                for i in 0..n {
                    let var = (2.0 * log_std[i]).exp();
                    let diff = a[i] - out[i];
                    dlogp_dout.push(diff / var);
                    dlogp_dlogstd.push(diff * diff / var - 1.0);
                }
                Ok(SampleTerms {
                    log_prob: gaussian_log_prob(out, log_std, a),
                    entropy: gaussian_entropy(log_std),
                    dlogp_dout,
                    dent_dout: vec![0.0; n],
                    dlogp_dlogstd,
                    dent_dlogstd: vec![1.0; n],
                })
            }
            _ => Err(Error::Malformed("action kind does not match the policy head".into())),
        }
    }

    pub fn log_prob(&self, input: &[f64], action: &Action) -> Result<f64> {
        Ok(self.terms(&self.net.predict(input), action)?.log_prob)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
            && self.log_std.as_ref().is_none_or(|ls| ls.iter().all(|v| v.is_finite()))
    }

    /// Parameter tensors including log-σ (last) for the optimizer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.net.params_mut();
        if let Some(ls) = self.log_std.as_mut() {
            p.push(ls.as_mut_slice());
        }
        p
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut s = self.net.param_sizes();
        if let Some(ls) = &self.log_std {
            s.push(ls.len());
        }
        s
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((mu, ls), a)| {
            let z = (a - mu) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (1.0 + (2.0 * PI).ln())).sum()
}
