//! RBF kernel, empirical MMD² between point sets, and trajectory-to-demo
//! distance queries.
//!
//! The MMD estimator is the biased V-statistic
//!
//! ```text
//! MMD²(A, B) = mean_{a,a'∈A} k(a,a') − 2·mean_{a∈A,b∈B} k(a,b) + mean_{b,b'∈B} k(b,b')
//! ```
//!
//! with self-pairs included, so it is never negative.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on points per side before subsampling.
pub const DEFAULT_MAX_POINTS: usize = 256;

/// How the RBF bandwidth σ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed { sigma: f64 },
    /// σ = median pairwise distance of the pooled inputs, recomputed on every
    /// distance call. Falls back to 1 when all points coincide.
    MedianHeuristic,
}

/// RBF kernel specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        Ok(Self { bandwidth: Bandwidth::Fixed { sigma } })
    }

    pub fn median_heuristic() -> Self {
        Self { bandwidth: Bandwidth::MedianHeuristic }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            Bandwidth::Fixed { sigma } => Self::fixed(sigma).map(|_| ()),
            Bandwidth::MedianHeuristic => Ok(()),
        }
    }

    /// Resolve σ for a particular pair of inputs.
    pub fn resolve(&self, a: &PointSet, b: &PointSet) -> f64 {
        match self.bandwidth {
            Bandwidth::Fixed { sigma } => sigma,
            Bandwidth::MedianHeuristic => median_pairwise_distance(a, b),
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::median_heuristic()
    }
}

/// Maps an observation to the features the distance looks at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "indices", rename_all = "snake_case")]
pub enum FeatureMap {
    #[default]
    Identity,
    CoordinateProjection(Vec<usize>),
}

impl FeatureMap {
    pub fn projection(indices: impl Into<Vec<usize>>) -> Self {
        FeatureMap::CoordinateProjection(indices.into())
    }

    /// Output dimension for an observation of dimension `obs_dim`.
    pub fn output_dim(&self, obs_dim: usize) -> Result<usize> {
        match self {
            FeatureMap::Identity => Ok(obs_dim),
            FeatureMap::CoordinateProjection(idx) => {
                if idx.is_empty() {
                    return Err(Error::Malformed("empty projection index list".into()));
                }
                if let Some(&bad) = idx.iter().find(|&&i| i >= obs_dim) {
                    return Err(Error::Malformed(format!(
                        "projection index {bad} out of range for observation dimension {obs_dim}"
                    )));
                }
                Ok(idx.len())
            }
        }
    }

    fn apply_into(&self, obs: &[f64], out: &mut Vec<f64>) {
        match self {
            FeatureMap::Identity => out.extend_from_slice(obs),
            FeatureMap::CoordinateProjection(idx) => out.extend(idx.iter().map(|&i| obs[i])),
        }
    }
}

/// A non-empty set of equal-dimension points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Malformed("point set must be non-empty".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Malformed("points must have at least one component".into()));
        }
        let mut data = Vec::with_capacity(dim * points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::Malformed(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(Error::Malformed(format!(
                "flat buffer of length {} does not hold whole points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Evenly strided, order-preserving subsample with at most `max_points`
    /// points (stride = ceil(n / max_points)).
    pub fn subsample(&self, max_points: usize) -> Cow<'_, PointSet> {
        let n = self.len();
        if max_points == 0 || n <= max_points {
            return Cow::Borrowed(self);
        }
        let stride = n.div_ceil(max_points);
        let mut data = Vec::with_capacity(self.dim * n.div_ceil(stride));
        for p in self.iter().step_by(stride) {
            data.extend_from_slice(p);
        }
        Cow::Owned(PointSet { dim: self.dim, data })
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// k(x, y) = exp(−‖x−y‖² / (2σ²)).
pub fn kernel_eval(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Malformed(format!(
            "kernel inputs differ in dimension ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    Ok((-sq_dist(x, y) / (2.0 * sigma * sigma)).exp())
}

fn median_pairwise_distance(a: &PointSet, b: &PointSet) -> f64 {
    let pooled: Vec<&[f64]> = a.iter().chain(b.iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len().saturating_sub(1)) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, |x, y| x.total_cmp(y));
    let median = *m;
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Sum of k over the cross product of two sets, rows accumulated in order.
fn cross_sum(a: &PointSet, b: &PointSet, inv_two_sigma_sq: f64) -> f64 {
    let mut total = 0.0;
    for x in a.iter() {
        let mut row = 0.0;
        for y in b.iter() {
            row += (-sq_dist(x, y) * inv_two_sigma_sq).exp();
        }
        total += row;
    }
    total
}

/// Sum of k over all ordered pairs of one set, self-pairs included.
fn self_sum(a: &PointSet, inv_two_sigma_sq: f64) -> f64 {
    let n = a.len();
    let mut off_diag = 0.0;
    for i in 0..n {
        let x = a.point(i);
        let mut row = 0.0;
        for j in i + 1..n {
            row += (-sq_dist(x, a.point(j)) * inv_two_sigma_sq).exp();
        }
        off_diag += row;
    }
    n as f64 + 2.0 * off_diag
}

fn mmd_sq_with_sigma(a: &PointSet, b: &PointSet, sigma: f64) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let kaa = self_sum(a, inv) / (n * n);
    let kbb = self_sum(b, inv) / (m * m);
    let kab = cross_sum(a, b, inv) / (n * m);
    // Rounding can push an exact zero a hair below it.
    (kaa - 2.0 * kab + kbb).max(0.0)
}

/// Biased (V-statistic) MMD² between two point sets.
pub fn mmd_sq(a: &PointSet, b: &PointSet, spec: &KernelSpec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Malformed(format!(
            "point sets differ in dimension ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    let sigma = spec.resolve(a, b);
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")));
    }
    Ok(mmd_sq_with_sigma(a, b, sigma))
}

/// Apply the feature map to every observation, preserving order.
pub fn traj_features<O: AsRef<[f64]>>(observations: &[O], g: &FeatureMap) -> Result<PointSet> {
    let first = observations
        .first()
        .ok_or_else(|| Error::Malformed("trajectory has no observations".into()))?;
    let obs_dim = first.as_ref().len();
    let dim = g.output_dim(obs_dim)?;
    let mut data = Vec::with_capacity(dim * observations.len());
    for (t, o) in observations.iter().enumerate() {
        let o = o.as_ref();
        if o.len() != obs_dim {
            return Err(Error::Malformed(format!(
                "observation {t} has dimension {}, expected {obs_dim}",
                o.len()
            )));
        }
        g.apply_into(o, &mut data);
    }
    PointSet::from_flat(dim, data)
}

/// MMD² between the feature sets of an agent trajectory and a demonstration,
/// each subsampled to at most `max_points`.
pub fn traj_mmd_sq(
    agent: &PointSet,
    demo: &PointSet,
    spec: &KernelSpec,
    max_points: usize,
) -> Result<f64> {
    let a = agent.subsample(max_points);
    let b = demo.subsample(max_points);
    mmd_sq(&a, &b, spec)
}

/// D(τ, M_E): minimum trajectory MMD² over the demonstration features, with
/// the index of the nearest demo (lowest index on ties).
pub fn dist_to_demoset(
    agent: &PointSet,
    demos: &[PointSet],
    spec: &KernelSpec,
    max_points: usize,
) -> Result<(f64, usize)> {
    if demos.is_empty() {
        return Err(Error::Config("demonstration set is empty".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, demo) in demos.iter().enumerate() {
        let d = traj_mmd_sq(agent, demo, spec, max_points)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}
