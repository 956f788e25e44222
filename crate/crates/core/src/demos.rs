//! State-only demonstration files: scripted generators for both
//! environments and a JSON Lines reader/writer that refuses action data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::{Action, Env, EnvPreset, KdtEnv, KdtLayout, KdtMove, KdtState, PointMassConfig, PointMassEnv};
use crate::error::{Error, Result};
use crate::guidance::{DemoSet, DemoTrajectory};
use crate::ppo::Actor;
use crate::trajectory::Trajectory;

/// Per-step probability of a random move in medium-quality grid demos.
pub const MEDIUM_KDT_NOISE: f64 = 0.7;
/// Action noise of medium-quality point-mass demos.
pub const MEDIUM_POINT_MASS_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoQuality {
    Expert,
    Medium,
}

impl DemoQuality {
    pub fn name(&self) -> &'static str {
        match self {
            DemoQuality::Expert => "expert",
            DemoQuality::Medium => "medium",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(DemoQuality::Expert),
            "medium" => Ok(DemoQuality::Medium),
            _ => Err(Error::Config(format!("unknown demo quality `{s}` (expected expert or medium)"))),
        }
    }
}

/// One line of a demo file. There is deliberately no action field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoFileRecord {
    pub env_id: String,
    pub quality: String,
    pub seed: u64,
    #[serde(rename = "return")]
    pub return_: f64,
    pub observations: Vec<Vec<f64>>,
}

impl DemoFileRecord {
    pub fn to_demo(&self) -> Result<DemoTrajectory> {
        DemoTrajectory::new(self.observations.clone(), self.return_)
    }

    pub fn from_trajectory(traj: &Trajectory, env_id: &str, quality: &str, seed: u64) -> Self {
        Self {
            env_id: env_id.to_string(),
            quality: quality.to_string(),
            seed,
            return_: traj.return_value(),
            observations: traj.observations().map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Moves-to-treasure from every (cell, key, door) state; `usize::MAX`
/// where the treasure is unreachable.
#[derive(Debug, Clone)]
pub struct KdtDistanceMap {
    layout: KdtLayout,
    dist: Vec<usize>,
}

impl KdtDistanceMap {
    pub fn new(layout: &KdtLayout) -> Self {
        let n = layout.height * layout.width * 4;
        let mut dist = vec![usize::MAX; n];
        let mut all = Vec::with_capacity(n);
        for row in 0..layout.height {
            for col in 0..layout.width {
                if layout.is_wall((row, col)) {
                    continue;
                }
                for has_key in [false, true] {
                    for door_open in [false, true] {
                        all.push(KdtState { row, col, has_key, door_open, step_count: 0 });
                    }
                }
            }
        }
        // Bellman-Ford style relaxation; converges in at most path-length
        // sweeps on these small grids.
        let mut changed = true;
        while changed {
            changed = false;
            for s in &all {
                let mut best = dist[Self::index(layout, s)];
                for mv in KdtMove::ALL {
                    let (next, _, done) = layout.transition(s, mv);
                    let cand = if done {
                        1
                    } else {
                        dist[Self::index(layout, &next)].saturating_add(1)
                    };
                    best = best.min(cand);
                }
                let slot = &mut dist[Self::index(layout, s)];
                if best < *slot {
                    *slot = best;
                    changed = true;
                }
            }
        }
        Self { layout: layout.clone(), dist }
    }

    fn index(layout: &KdtLayout, s: &KdtState) -> usize {
        ((s.row * layout.width + s.col) * 2 + s.has_key as usize) * 2 + s.door_open as usize
    }

    pub fn distance(&self, s: &KdtState) -> usize {
        self.dist[Self::index(&self.layout, s)]
    }

    /// Moves that make progress on a shortest path, in action-index order.
    pub fn optimal_moves(&self, s: &KdtState) -> Vec<KdtMove> {
        let d = self.distance(s);
        if d == usize::MAX {
            return Vec::new();
        }
        KdtMove::ALL
            .into_iter()
            .filter(|&mv| {
                let (next, _, done) = self.layout.transition(s, mv);
                if done {
                    d == 1
                } else {
                    self.distance(&next).saturating_add(1) == d
                }
            })
            .collect()
    }
}

fn kdt_rollout<F>(layout: &KdtLayout, env_id: &str, mut choose: F) -> Result<(Vec<Vec<f64>>, f64)>
where
    F: FnMut(&KdtState) -> Result<KdtMove>,
{
    let mut env = KdtEnv::new(layout.clone(), env_id);
    let mut obs = env.reset();
    let mut observations = Vec::new();
    let mut ret = 0.0;
    loop {
        let mv = choose(env.state())?;
        observations.push(obs);
        let out = env.step_move(mv)?;
        ret += out.reward;
        if out.done() {
            return Ok((observations, ret));
        }
        obs = out.observation;
    }
}

fn expert_move<R: Rng + ?Sized>(map: &KdtDistanceMap, s: &KdtState, ties: Option<&mut R>) -> Result<KdtMove> {
    let moves = map.optimal_moves(s);
    match (moves.len(), ties) {
        (0, _) => Err(Error::Layout("treasure unreachable from the current state".into())),
        (1, _) | (_, None) => Ok(moves[0]),
        (n, Some(rng)) => Ok(moves[rng.random_range(0..n)]),
    }
}

/// Acts along a shortest path from whatever grid observation it is given;
/// a reference policy for evaluation.
#[derive(Debug, Clone)]
pub struct KdtOracle {
    map: KdtDistanceMap,
}

impl KdtOracle {
    pub fn new(layout: &KdtLayout) -> Self {
        Self { map: KdtDistanceMap::new(layout) }
    }
}

impl Actor for KdtOracle {
    fn act<R: Rng + ?Sized>(&self, observation: &[f64], _rng: &mut R) -> (Action, f64) {
        let state = KdtState {
            row: observation[0] as usize,
            col: observation[1] as usize,
            has_key: observation[2] > 0.5,
            door_open: observation[3] > 0.5,
            step_count: 0,
        };
        let mv = self.map.optimal_moves(&state).first().copied().unwrap_or(KdtMove::East);
        (Action::Discrete(mv.index()), 0.0)
    }
}

/// Shortest start→key→door→treasure path, breaking ties by action index.
pub fn scripted_expert_kdt(layout: &KdtLayout, env_id: &str) -> Result<DemoFileRecord> {
    let map = KdtDistanceMap::new(layout);
    let (observations, ret) = kdt_rollout(layout, env_id, |s| expert_move::<ChaCha8Rng>(&map, s, None))?;
    Ok(DemoFileRecord { env_id: env_id.into(), quality: "expert".into(), seed: 0, return_: ret, observations })
}

/// A shortest path whose ties are broken at random, so that several expert
/// demos can differ while all staying optimal.
pub fn scripted_expert_kdt_seeded(layout: &KdtLayout, env_id: &str, seed: u64) -> Result<DemoFileRecord> {
    let map = KdtDistanceMap::new(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (observations, ret) = kdt_rollout(layout, env_id, |s| expert_move(&map, s, Some(&mut rng)))?;
    Ok(DemoFileRecord { env_id: env_id.into(), quality: "expert".into(), seed, return_: ret, observations })
}

/// Expert path with a uniformly random move taken with probability `noise`
/// at every step, until the treasure or the step cap. With `noise = 0` this
/// is exactly [`scripted_expert_kdt_seeded`].
pub fn scripted_medium_kdt(layout: &KdtLayout, env_id: &str, noise: f64, seed: u64) -> Result<DemoFileRecord> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::Config(format!("noise must lie in [0, 1], got {noise}")));
    }
    let map = KdtDistanceMap::new(layout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (observations, ret) = kdt_rollout(layout, env_id, |s| {
        if noise > 0.0 && rng.random::<f64>() < noise {
            Ok(KdtMove::ALL[rng.random_range(0..4)])
        } else {
            expert_move(&map, s, Some(&mut rng))
        }
    })?;
    Ok(DemoFileRecord { env_id: env_id.into(), quality: "medium".into(), seed, return_: ret, observations })
}

/// Proportional controller `clamp(goal − position)`, optionally with
/// Gaussian action noise.
pub fn scripted_point_mass(config: &PointMassConfig, noise_std: f64, seed: u64) -> Result<DemoFileRecord> {
    let normal = Normal::new(0.0, noise_std.max(0.0))
        .map_err(|e| Error::Config(format!("bad noise std {noise_std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = PointMassEnv::new(*config);
    let mut obs = env.reset();
    let mut observations = Vec::new();
    let mut ret = 0.0;
    loop {
        let p = env.state().position;
        let mut a = [0.0; 2];
        for i in 0..2 {
            a[i] = (config.goal[i] - p[i]).clamp(-1.0, 1.0);
            if noise_std > 0.0 {
                a[i] += normal.sample(&mut rng);
            }
        }
        observations.push(obs);
        let out = env.step(&Action::Continuous(a.to_vec()))?;
        ret += out.reward;
        if out.done() {
            break;
        }
        obs = out.observation;
    }
    let quality = if noise_std > 0.0 { "medium" } else { "expert" };
    Ok(DemoFileRecord { env_id: env.id().into(), quality: quality.into(), seed, return_: ret, observations })
}

/// `count` records for a preset. Record `i` uses seed `seed + i`.
pub fn generate(preset: EnvPreset, quality: DemoQuality, count: usize, seed: u64) -> Result<Vec<DemoFileRecord>> {
    if count == 0 {
        return Err(Error::Config("demo count must be positive".into()));
    }
    (0..count as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            match (preset.kdt_layout(), quality) {
                (Some(layout), DemoQuality::Expert) => scripted_expert_kdt_seeded(&layout, preset.id(), s),
                (Some(layout), DemoQuality::Medium) => {
                    scripted_medium_kdt(&layout, preset.id(), MEDIUM_KDT_NOISE, s)
                }
                (None, DemoQuality::Expert) => scripted_point_mass(&PointMassConfig::default(), 0.0, s),
                (None, DemoQuality::Medium) => {
                    scripted_point_mass(&PointMassConfig::default(), MEDIUM_POINT_MASS_STD, s)
                }
            }
        })
        .collect()
}

/// Write one JSON object per line.
pub fn save_records(path: &Path, records: &[DemoFileRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn parse_line(line: &str, lineno: usize) -> Result<DemoFileRecord> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::DemoParse { line: lineno, msg: e.to_string() })?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::DemoParse { line: lineno, msg: "record is not a JSON object".into() })?;
    if let Some(key) = obj.keys().find(|k| k.to_ascii_lowercase().contains("action")) {
        return Err(Error::StateOnly(format!("line {lineno}: record carries `{key}`")));
    }
    let rec: DemoFileRecord =
        serde_json::from_value(value).map_err(|e| Error::DemoParse { line: lineno, msg: e.to_string() })?;
    if rec.observations.is_empty() {
        return Err(Error::DemoParse { line: lineno, msg: "observations are empty".into() });
    }
    let dim = rec.observations[0].len();
    if dim == 0 || rec.observations.iter().any(|o| o.len() != dim) {
        return Err(Error::DemoParse { line: lineno, msg: "observations differ in dimension".into() });
    }
    Ok(rec)
}

/// Read every record; blank lines are skipped, line numbers are 1-based.
pub fn load_records(path: &Path) -> Result<Vec<DemoFileRecord>> {
    let file = File::open(path).map_err(|e| Error::Config(format!("cannot open demo file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("demo file {} holds no records", path.display())));
    }
    Ok(out)
}

/// Load a demo memory, checking that every record belongs to `env_id`.
pub fn load_demos(path: &Path, env_id: &str, capacity: usize) -> Result<DemoSet> {
    let records = load_records(path)?;
    demo_set(&records, env_id, capacity)
}

pub fn demo_set(records: &[DemoFileRecord], env_id: &str, capacity: usize) -> Result<DemoSet> {
    if let Some(r) = records.iter().find(|r| r.env_id != env_id) {
        return Err(Error::Config(format!("demo recorded on `{}` but training on `{env_id}`", r.env_id)));
    }
    let demos = records.iter().map(DemoFileRecord::to_demo).collect::<Result<Vec<_>>>()?;
    DemoSet::new(demos, capacity)
}
