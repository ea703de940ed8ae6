//! Continuous four-room navigation with optional river and key.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TrajectoryDataset, Transition};
use crate::error::{PorError, Result};

pub const MAX_ACTION: f64 = 0.1;
pub const OBS_BOUND: f64 = 18.0;

const TASK_A: &str = include_str!("../../assets/fourroom_a.toml");
const TASK_B: &str = include_str!("../../assets/fourroom_b.toml");
const TASK_C: &str = include_str!("../../assets/fourroom_c.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    /// Reach the goal.
    A,
    /// Reach the goal without touching the river.
    B,
    /// Pick up the key, then reach the goal, avoiding the river.
    C,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::A, TaskId::B, TaskId::C];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::A => "four-room",
            TaskId::B => "four-room-river",
            TaskId::C => "four-room-key",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = PorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "four-room" => Ok(TaskId::A),
            "b" | "four-room-river" => Ok(TaskId::B),
            "c" | "four-room-key" => Ok(TaskId::C),
            _ => Err(PorError::InvalidArgument(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        dist(p, self.center) <= self.radius
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Task geometry as stored in the shipped TOML files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourRoomConfig {
    pub task: TaskId,
    pub horizon: usize,
    pub start: [f64; 2],
    pub start_jitter: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub map: String,
    #[serde(default)]
    pub rivers: Vec<Rect>,
    #[serde(default)]
    pub key: Option<Circle>,
}

impl FourRoomConfig {
    pub fn builtin(task: TaskId) -> Self {
        let text = match task {
            TaskId::A => TASK_A,
            TaskId::B => TASK_B,
            TaskId::C => TASK_C,
        };
        Self::parse(text).expect("shipped task config parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PorError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PorError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Wall layout: `walls[j][i]` with `j` counted from the bottom row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WallMap {
    width: usize,
    height: usize,
    walls: Vec<Vec<bool>>,
}

impl WallMap {
    pub fn parse(map: &str) -> Result<Self> {
        let rows: Vec<&str> = map.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(PorError::Config("empty map".into()));
        }
        let width = rows[0].chars().count();
        let mut walls = Vec::with_capacity(rows.len());
        for row in rows.iter().rev() {
            if row.chars().count() != width {
                return Err(PorError::Config("map rows differ in length".into()));
            }
            walls.push(
                row.chars()
                    .map(|c| match c {
                        '#' => Ok(true),
                        '.' => Ok(false),
                        other => Err(PorError::Config(format!("unexpected map character `{other}`"))),
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(WallMap { width, height: walls.len(), walls })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    fn origin(&self) -> [f64; 2] {
        [-(self.width as f64) / 2.0, -(self.height as f64) / 2.0]
    }

    /// Cell containing a point, or `None` outside the map.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let o = self.origin();
        let i = (p[0] - o[0]).floor();
        let j = (p[1] - o[1]).floor();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn cell_center(&self, (i, j): (usize, usize)) -> [f64; 2] {
        let o = self.origin();
        [o[0] + i as f64 + 0.5, o[1] + j as f64 + 0.5]
    }

    pub fn is_wall_cell(&self, (i, j): (usize, usize)) -> bool {
        self.walls[j][i]
    }

    /// Walls and everything outside the map count as blocked.
    pub fn blocked(&self, p: [f64; 2]) -> bool {
        match self.cell_of(p) {
            Some(c) => self.is_wall_cell(c),
            None => true,
        }
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|j| (0..self.width).map(move |i| (i, j)))
            .filter(|&c| !self.is_wall_cell(c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepInfo {
    pub entered_river: bool,
    pub picked_key: bool,
    pub reached_goal: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: [f64; 2],
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One episode's worth of mutable environment state on top of fixed geometry.
#[derive(Debug, Clone)]
pub struct FourRoomEnv {
    config: FourRoomConfig,
    map: WallMap,
    pos: [f64; 2],
    has_key: bool,
    steps: usize,
}

impl FourRoomEnv {
    pub fn new(task: TaskId) -> Self {
        Self::from_config(FourRoomConfig::builtin(task)).expect("shipped geometry is valid")
    }

    pub fn from_config(config: FourRoomConfig) -> Result<Self> {
        let map = WallMap::parse(&config.map)?;
        if config.horizon == 0 {
            return Err(PorError::Config("horizon must be positive".into()));
        }
        if map.blocked(config.start) || map.blocked(config.goal) {
            return Err(PorError::Config("start or goal lies inside a wall".into()));
        }
        if !(config.goal_radius > 0.0) || !(config.start_jitter >= 0.0) {
            return Err(PorError::Config("goal_radius must be positive, start_jitter non-negative".into()));
        }
        let pos = config.start;
        Ok(FourRoomEnv {
            config,
            map,
            pos,
            has_key: false,
            steps: 0,
        })
    }

    pub fn config(&self) -> &FourRoomConfig {
        &self.config
    }

    pub fn task(&self) -> TaskId {
        self.config.task
    }

    pub fn map(&self) -> &WallMap {
        &self.map
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn in_river(&self, p: [f64; 2]) -> bool {
        self.config.rivers.iter().any(|r| r.contains(p))
    }

    pub fn at_goal(&self, p: [f64; 2]) -> bool {
        dist(p, self.config.goal) <= self.config.goal_radius
    }

    pub fn at_key(&self, p: [f64; 2]) -> bool {
        self.config.key.is_some_and(|k| k.contains(p))
    }

    /// Pure dynamics: clip the action to the box, then move along x and y
    /// separately, dropping any axis move that would end inside a wall.
    pub fn transition(&self, s: [f64; 2], a: [f64; 2]) -> [f64; 2] {
        let clip = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-MAX_ACTION, MAX_ACTION) };
        let mut p = s;
        for axis in 0..2 {
            let mut q = p;
            q[axis] = (q[axis] + clip(a[axis])).clamp(-OBS_BOUND, OBS_BOUND);
            if !self.map.blocked(q) {
                p = q;
            }
        }
        p
    }

    /// Reward and termination for moving into `next` given the key status
    /// held before the move.
    pub fn reward_rule(&self, next: [f64; 2], had_key: bool) -> (f64, bool, StepInfo) {
        let mut info = StepInfo::default();
        if self.in_river(next) {
            info.entered_river = true;
            return (-1.0, true, info);
        }
        info.picked_key = !had_key && self.at_key(next);
        if self.at_goal(next) && (self.config.key.is_none() || had_key) {
            info.reached_goal = true;
            return (1.0, true, info);
        }
        (0.0, false, info)
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; 2] {
        let j = self.config.start_jitter;
        let start = self.config.start;
        let pos = loop {
            let p = if j > 0.0 {
                [start[0] + rng.gen_range(-j..=j), start[1] + rng.gen_range(-j..=j)]
            } else {
                start
            };
            if !self.map.blocked(p) {
                break p;
            }
        };
        self.reset_to(pos);
        pos
    }

    pub fn reset_to(&mut self, pos: [f64; 2]) {
        self.pos = pos;
        self.has_key = self.at_key(pos);
        self.steps = 0;
    }

    pub fn step(&mut self, a: [f64; 2]) -> StepOutcome {
        let next = self.transition(self.pos, a);
        let (reward, mut done, mut info) = self.reward_rule(next, self.has_key);
        self.has_key |= info.picked_key;
        self.pos = next;
        self.steps += 1;
        if !done && self.steps >= self.config.horizon {
            info.truncated = true;
            done = true;
        }
        StepOutcome {
            next_state: next,
            reward,
            done,
            info,
        }
    }

    /// Rewrite rewards and terminations of a dataset recorded in the same
    /// geometry under this task's rules. Key status restarts at every
    /// trajectory start, and each trajectory is cut at its first terminal
    /// event.
    pub fn relabel(&self, dataset: &TrajectoryDataset) -> Result<TrajectoryDataset> {
        if dataset.obs_dim() != 2 {
            return Err(PorError::DimensionMismatch {
                context: "four-room relabel",
                expected: 2,
                got: dataset.obs_dim(),
            });
        }
        let mut out = TrajectoryDataset::empty(2, dataset.act_dim()).with_meta(dataset.meta.clone());
        for traj in dataset.trajectories() {
            let mut has_key = self.at_key([traj[0].state[0], traj[0].state[1]]);
            let mut kept = Vec::with_capacity(traj.len());
            for t in traj {
                let next = [t.next_state[0], t.next_state[1]];
                let (reward, done, info) = self.reward_rule(next, has_key);
                has_key |= info.picked_key;
                kept.push(Transition {
                    reward,
                    done,
                    ..t.clone()
                });
                if done {
                    break;
                }
            }
            out.push_trajectory(kept);
        }
        out.meta.env_id = self.task().name().to_string();
        out.validate()?;
        Ok(out)
    }
}
