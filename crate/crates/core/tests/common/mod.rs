//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};

use posg::envs::{Action, KdtLayout};
use posg::nn::DenseNet;
use posg::trajectory::{Step, Trajectory};

/// Biased MMD² by direct summation over every pair.
pub fn mmd_sq_brute(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let mut d2 = 0.0;
        for i in 0..x.len() {
            d2 += (x[i] - y[i]) * (x[i] - y[i]);
        }
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut xx = 0.0;
    for x in a {
        for y in a {
            xx += k(x, y);
        }
    }
    let mut yy = 0.0;
    for x in b {
        for y in b {
            yy += k(x, y);
        }
    }
    let mut xy = 0.0;
    for x in a {
        for y in b {
            xy += k(x, y);
        }
    }
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

/// Largest relative error between analytic gradients of `Σ ⟨g, net(x)⟩`
/// and central differences, over every parameter.
pub fn max_grad_rel_error(net: &DenseNet, inputs: &[Vec<f64>], out_grad: &[Vec<f64>], h: f64) -> f64 {
    let rows = inputs.len();
    let x = ndarray::Array2::from_shape_fn((rows, net.input_dim()), |(i, j)| inputs[i][j]);
    let g = ndarray::Array2::from_shape_fn((rows, net.output_dim()), |(i, j)| out_grad[i][j]);
    let cache = net.forward_batch(x.view()).unwrap();
    let analytic: Vec<Vec<f64>> = net.backward(&cache, g.view()).unwrap().slices().iter().map(|s| s.to_vec()).collect();

    let loss = |n: &DenseNet| -> f64 {
        let mut total = 0.0;
        for (x, g) in inputs.iter().zip(out_grad) {
            for (o, gi) in n.predict(x).iter().zip(g) {
                total += o * gi;
            }
        }
        total
    };

    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let orig = probe.params_mut()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = loss(&probe);
            probe.params_mut()[t][i] = orig - h;
            let down = loss(&probe);
            probe.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Shortest start→key→door→treasure move count by three grid BFS legs
/// over the rendered layout text.
pub fn kdt_bfs_len(layout: &KdtLayout) -> usize {
    let grid: Vec<Vec<char>> = layout.to_text().lines().map(|l| l.chars().collect()).collect();
    let find = |c: char| {
        for (r, row) in grid.iter().enumerate() {
            if let Some(col) = row.iter().position(|&x| x == c) {
                return (r, col);
            }
        }
        panic!("no {c} in layout");
    };
    let leg = |from: (usize, usize), to: (usize, usize), door_open: bool| -> usize {
        let mut dist = HashMap::from([(from, 0usize)]);
        let mut q = VecDeque::from([from]);
        while let Some(p) = q.pop_front() {
            if p == to {
                return dist[&p];
            }
            let d = dist[&p];
            for (dr, dc) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let (r, c) = (p.0 as i64 + dr, p.1 as i64 + dc);
                if r < 0 || c < 0 || r as usize >= grid.len() || c as usize >= grid[0].len() {
                    continue;
                }
                let n = (r as usize, c as usize);
                let ch = grid[n.0][n.1];
                let blocked = ch == '#' || (ch == 'D' && !door_open && n != to) || (ch == 'T' && n != to);
                if !blocked && !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    q.push_back(n);
                }
            }
        }
        panic!("leg unreachable");
    };
    let (s, k, d, t) = (find('S'), find('K'), find('D'), find('T'));
    leg(s, k, false) + leg(k, d, false) + leg(d, t, true)
}

/// Left/right chain over states 0..=3 starting at 0. Moving left from 0
/// stays put; reaching 3 pays 1. Episodes last exactly three steps.
pub const CHAIN_STATES: usize = 4;
pub const CHAIN_HORIZON: usize = 3;

/// Every deterministic policy over the non-goal states, as (policy,
/// trajectory) pairs. Action 0 is left, 1 is right.
pub fn chain_policies() -> Vec<(Vec<usize>, Trajectory)> {
    let n = CHAIN_STATES - 1;
    (0..1usize << n)
        .map(|bits| {
            let policy: Vec<usize> = (0..n).map(|s| (bits >> s) & 1).collect();
            let mut s = 0usize;
            let mut steps = Vec::new();
            for _ in 0..CHAIN_HORIZON {
                let a = policy[s];
                let next = if a == 1 { s + 1 } else { s.saturating_sub(1) };
                let reward = if next == CHAIN_STATES - 1 { 1.0 } else { 0.0 };
                steps.push(Step { observation: vec![s as f64], action: Action::Discrete(a), reward, log_prob: 0.0 });
                s = next;
            }
            let done = s == CHAIN_STATES - 1;
            (policy, Trajectory::new(steps, vec![s as f64], done).unwrap())
        })
        .collect()
}

/// Total guidance reward of every trajectory in `buffer` computed from
/// scratch: brute-force MMD² to the demo, softmax-style weights, joint
/// returns, then the per-key mean importance summed along each trajectory.
pub fn guidance_totals_brute(
    buffer: &[Trajectory],
    demo: &[Vec<f64>],
    demo_return: f64,
    sigma: f64,
    k_temp: f64,
    alpha: f64,
) -> Vec<f64> {
    let dists: Vec<f64> = buffer
        .iter()
        .map(|t| {
            let obs: Vec<Vec<f64>> = t.steps().iter().map(|s| s.observation.clone()).collect();
            mmd_sq_brute(&obs, demo, sigma)
        })
        .collect();
    let z: f64 = dists.iter().map(|d| (-k_temp * d).exp()).sum();
    let imp: Vec<f64> = buffer
        .iter()
        .zip(&dists)
        .map(|(t, d)| (-k_temp * d).exp() / z * (alpha * t.return_value() + (1.0 - alpha) * demo_return))
        .collect();
    let key = |s: &Step| (s.observation[0] as i64, s.action.discrete_index().unwrap());
    let mut lists: HashMap<(i64, usize), Vec<f64>> = HashMap::new();
    for (t, &i) in buffer.iter().zip(&imp) {
        let keys: HashSet<_> = t.steps().iter().map(key).collect();
        for k in keys {
            lists.entry(k).or_default().push(i);
        }
    }
    buffer
        .iter()
        .map(|t| {
            t.steps()
                .iter()
                .map(|s| {
                    let l = &lists[&key(s)];
                    l.iter().sum::<f64>() / l.len() as f64
                })
                .sum()
        })
        .collect()
}

/// Advantages by the explicit double sum Σ_l (γλ)^l δ_{t+l} within one
/// episode that ends terminally.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n)
        .map(|t| (t..n).map(|j| (gamma * lambda).powi((j - t) as i32) * delta[j]).sum())
        .collect()
}
