use std::collections::VecDeque;
use std::sync::Arc;

use super::{Action, ActionSpace, Env, StepOutcome};
use crate::error::{Error, Result};

pub const KDT_TREASURE_REWARD: f64 = 200.0;

const FULL_LAYOUT: &str = include_str!("layouts/kdt_full.txt");
const SMALL_LAYOUT: &str = include_str!("layouts/kdt_small.txt");

pub type Cell = (usize, usize);

/// The four grid moves, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdtMove {
    East,
    West,
    South,
    North,
}

impl KdtMove {
    pub const ALL: [KdtMove; 4] = [KdtMove::East, KdtMove::West, KdtMove::South, KdtMove::North];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            KdtMove::East => (0, 1),
            KdtMove::West => (0, -1),
            KdtMove::South => (1, 0),
            KdtMove::North => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KdtState {
    pub row: usize,
    pub col: usize,
    pub has_key: bool,
    pub door_open: bool,
    pub step_count: usize,
}

impl KdtState {
    pub fn cell(&self) -> Cell {
        (self.row, self.col)
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.row as f64,
            self.col as f64,
            if self.has_key { 1.0 } else { 0.0 },
            if self.door_open { 1.0 } else { 0.0 },
        ]
    }
}

/// Grid geometry of a Key-Door-Treasure maze.
///
/// Text format: one row per line, `#` wall, `.` floor, `K` key, `D` door,
/// `T` treasure, `S` start. Exactly one of each special cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KdtLayout {
    pub height: usize,
    pub width: usize,
    walls: Vec<bool>,
    pub key: Cell,
    pub door: Cell,
    pub treasure: Cell,
    pub start: Cell,
    pub max_steps: usize,
}

impl KdtLayout {
    /// The shipped 26×36 maze with 240-step episodes.
    pub fn full() -> Self {
        Self::parse(FULL_LAYOUT, 240).expect("bundled layout is valid")
    }

    /// The 13×18 maze with 120-step episodes.
    pub fn small() -> Self {
        Self::parse(SMALL_LAYOUT, 120).expect("bundled layout is valid")
    }

    pub fn parse(text: &str, max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::Layout("max_steps must be positive".into()));
        }
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        if height == 0 {
            return Err(Error::Layout("empty layout".into()));
        }
        let width = rows[0].chars().count();
        let mut walls = Vec::with_capacity(height * width);
        let (mut key, mut door, mut treasure, mut start) = (None, None, None, None);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Layout(format!(
                    "row {r} has width {}, expected {width}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let slot = match ch {
                    '#' => None,
                    '.' => None,
                    'K' => Some(&mut key),
                    'D' => Some(&mut door),
                    'T' => Some(&mut treasure),
                    'S' => Some(&mut start),
                    other => {
                        return Err(Error::Layout(format!("unknown character `{other}` at ({r}, {c})")))
                    }
                };
                if let Some(slot) = slot {
                    if slot.replace((r, c)).is_some() {
                        return Err(Error::Layout(format!("duplicate `{ch}` at ({r}, {c})")));
                    }
                }
                walls.push(ch == '#');
            }
        }
        let need = |cell: Option<Cell>, name: &str| {
            cell.ok_or_else(|| Error::Layout(format!("layout has no {name} cell")))
        };
        let layout = Self {
            height,
            width,
            walls,
            key: need(key, "key")?,
            door: need(door, "door")?,
            treasure: need(treasure, "treasure")?,
            start: need(start, "start")?,
            max_steps,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[cell.0 * self.width + cell.1]
    }

    /// Render back to the text format.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.height * (self.width + 1));
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = match (r, c) {
                    x if x == self.key => 'K',
                    x if x == self.door => 'D',
                    x if x == self.treasure => 'T',
                    x if x == self.start => 'S',
                    x if self.is_wall(x) => '#',
                    _ => '.',
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn initial_state(&self) -> KdtState {
        KdtState {
            row: self.start.0,
            col: self.start.1,
            has_key: false,
            door_open: false,
            step_count: 0,
        }
    }

    /// Deterministic transition ignoring the step counter: returns the next
    /// state, the reward and whether the treasure was reached.
    pub fn transition(&self, state: &KdtState, mv: KdtMove) -> (KdtState, f64, bool) {
        let mut next = *state;
        let (dr, dc) = mv.delta();
        let target = (
            state.row.checked_add_signed(dr).filter(|&r| r < self.height),
            state.col.checked_add_signed(dc).filter(|&c| c < self.width),
        );
        let (Some(r), Some(c)) = target else {
            return (next, 0.0, false);
        };
        let cell = (r, c);
        if self.is_wall(cell) {
            return (next, 0.0, false);
        }
        if cell == self.door && !state.door_open {
            if !state.has_key {
                return (next, 0.0, false);
            }
            next.door_open = true;
        }
        next.row = r;
        next.col = c;
        if cell == self.key {
            next.has_key = true;
        }
        if cell == self.treasure {
            return (next, KDT_TREASURE_REWARD, true);
        }
        (next, 0.0, false)
    }

    /// Breadth-first search over (cell, key, door) states. Returns the
    /// minimum number of moves from start to treasure, if reachable. With
    /// `ignore_key` the key cell never grants the key.
    fn shortest_path_len(&self, ignore_key: bool) -> Option<usize> {
        let idx = |s: &KdtState| {
            ((s.row * self.width + s.col) * 2 + s.has_key as usize) * 2 + s.door_open as usize
        };
        let mut seen = vec![false; self.height * self.width * 4];
        let start = self.initial_state();
        seen[idx(&start)] = true;
        let mut queue = VecDeque::from([(start, 0usize)]);
        while let Some((s, depth)) = queue.pop_front() {
            for mv in KdtMove::ALL {
                let (mut n, _, done) = self.transition(&s, mv);
                if done {
                    return Some(depth + 1);
                }
                if ignore_key {
                    n.has_key = false;
                }
                if !seen[idx(&n)] {
                    seen[idx(&n)] = true;
                    queue.push_back((n, depth + 1));
                }
            }
        }
        None
    }

    fn validate(&self) -> Result<()> {
        let specials = [self.key, self.door, self.treasure, self.start];
        for (i, a) in specials.iter().enumerate() {
            if specials[i + 1..].contains(a) {
                return Err(Error::Layout(format!("special cells overlap at {a:?}")));
            }
        }
        if self.shortest_path_len(false).is_none() {
            return Err(Error::Layout("treasure unreachable via key and door".into()));
        }
        if self.shortest_path_len(true).is_some() {
            return Err(Error::Layout("treasure reachable without the key".into()));
        }
        Ok(())
    }
}

/// Key-Door-Treasure episode runner.
#[derive(Debug, Clone)]
pub struct KdtEnv {
    layout: Arc<KdtLayout>,
    id: String,
    state: KdtState,
    done: bool,
}

impl KdtEnv {
    pub fn new(layout: KdtLayout, id: impl Into<String>) -> Self {
        let layout = Arc::new(layout);
        let state = layout.initial_state();
        Self { layout, id: id.into(), state, done: false }
    }

    pub fn layout(&self) -> &KdtLayout {
        &self.layout
    }

    pub fn state(&self) -> &KdtState {
        &self.state
    }

    pub fn step_move(&mut self, mv: KdtMove) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Env("step called after the episode finished".into()));
        }
        let (mut next, reward, terminated) = self.layout.transition(&self.state, mv);
        next.step_count = self.state.step_count + 1;
        let truncated = !terminated && next.step_count >= self.layout.max_steps;
        self.state = next;
        self.done = terminated || truncated;
        Ok(StepOutcome {
            observation: next.observation(),
            reward,
            terminated,
            truncated,
        })
    }
}

impl Env for KdtEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn max_steps(&self) -> usize {
        self.layout.max_steps
    }

    fn discrete_observations(&self) -> bool {
        true
    }

    fn observation_scale(&self) -> Vec<f64> {
        vec![1.0 / self.layout.height as f64, 1.0 / self.layout.width as f64, 1.0, 1.0]
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = self.layout.initial_state();
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let mv = match action {
            Action::Discrete(i) => KdtMove::from_index(*i)
                .ok_or_else(|| Error::Env(format!("action index {i} out of range 0..4")))?,
            Action::Continuous(_) => {
                return Err(Error::Env("grid world takes discrete actions".into()))
            }
        };
        self.step_move(mv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
#######
#S.K#T#
#...D.#
#######
";

    fn tiny() -> KdtEnv {
        KdtEnv::new(KdtLayout::parse(TINY, 20).unwrap(), "tiny")
    }

    #[test]
    fn bundled_layouts_are_valid() {
        let full = KdtLayout::full();
        assert_eq!((full.height, full.width, full.max_steps), (26, 36, 240));
        let small = KdtLayout::small();
        assert_eq!((small.height, small.width, small.max_steps), (13, 18, 120));
        assert_eq!(KdtLayout::parse(&small.to_text(), 120).unwrap(), small);
    }

    #[test]
    fn reset_state() {
        let mut env = tiny();
        let o1 = env.reset();
        let o2 = env.reset();
        assert_eq!(o1, o2);
        assert_eq!(&o1[2..], &[0.0, 0.0]);
        assert_eq!(env.state().cell(), env.layout().start);
    }

    #[test]
    fn walls_block() {
        let mut env = tiny();
        env.reset();
        let out = env.step_move(KdtMove::North).unwrap();
        assert_eq!(&out.observation[..2], &[1.0, 1.0]);
        assert_eq!(out.reward, 0.0);
        let out = env.step_move(KdtMove::West).unwrap();
        assert_eq!(&out.observation[..2], &[1.0, 1.0]);
    }

    #[test]
    fn door_needs_key() {
        let mut env = tiny();
        env.reset();
        for mv in [KdtMove::South, KdtMove::East, KdtMove::East, KdtMove::East] {
            env.step_move(mv).unwrap();
        }
        // The third east bumped into the closed door at (2,4).
        let before = *env.state();
        assert_eq!(before.cell(), (2, 3));
        let out = env.step_move(KdtMove::East).unwrap();
        assert_eq!(env.state().cell(), (2, 3));
        assert_eq!(out.observation[3], 0.0);
    }

    #[test]
    fn full_task_reaches_treasure() {
        let mut env = tiny();
        env.reset();
        use KdtMove::*;
        let mut last = None;
        for mv in [East, East, South, East, East, North] {
            last = Some(env.step_move(mv).unwrap());
        }
        let out = last.unwrap();
        assert_eq!(out.reward, KDT_TREASURE_REWARD);
        assert!(out.terminated);
        assert!(matches!(env.step_move(East), Err(Error::Env(_))));
    }

    #[test]
    fn time_limit_truncates() {
        let mut env = KdtEnv::new(KdtLayout::parse(TINY, 3).unwrap(), "tiny");
        env.reset();
        for i in 0..3 {
            let out = env.step_move(KdtMove::North).unwrap();
            assert_eq!(out.truncated, i == 2);
            assert_eq!(out.reward, 0.0);
        }
        assert!(env.step_move(KdtMove::North).is_err());
    }

    #[test]
    fn invalid_layouts_rejected() {
        assert!(KdtLayout::parse("#S.T#\n", 10).is_err());
        let bypass = "\
#######
#S.K.T#
#...D.#
#######
";
        assert!(matches!(KdtLayout::parse(bypass, 10), Err(Error::Layout(_))));
        let blocked = "\
#######
#S.K#T#
#..##D#
#######
";
        assert!(KdtLayout::parse(blocked, 10).is_err());
        assert!(KdtLayout::parse("#SS\n", 10).is_err());
        assert!(KdtLayout::parse("#S.K#T#\n#...D.\n", 10).is_err());
    }
}
