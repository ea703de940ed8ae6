//! Exact value iteration on gridworld datasets, and the two ways of
//! stitching dataset behaviour into a policy.
//!
//! Action-stitching may only replay actions recorded in the dataset.
//! State-stitching may take any action, provided it lands on a state the
//! dataset assigns a value to.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::TrajectoryDataset;
use crate::envs::grid::{state_to_cell, Cell, GridWorld};
use crate::error::{PorError, Result};

const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    Defined(f64),
    /// Never a source state in the dataset.
    Absent,
    /// Has dataset transitions, none of which lead to the goal.
    Disconnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularValue {
    values: BTreeMap<Cell, f64>,
    disconnected: BTreeSet<Cell>,
    goal: Cell,
    pub gamma: f64,
    pub tolerance: f64,
    pub sweeps: usize,
}

impl TabularValue {
    pub fn get(&self, c: Cell) -> CellValue {
        match self.values.get(&c) {
            Some(&v) => CellValue::Defined(v),
            None if self.disconnected.contains(&c) => CellValue::Disconnected,
            None => CellValue::Absent,
        }
    }

    pub fn value(&self, c: Cell) -> Option<f64> {
        self.values.get(&c).copied()
    }

    pub fn defined(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.values.iter().map(|(&c, &v)| (c, v))
    }

    pub fn disconnected(&self) -> impl Iterator<Item = Cell> + '_ {
        self.disconnected.iter().copied()
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }
}

struct GridTransition {
    from: Cell,
    action: usize,
    to: Cell,
    reward: f64,
    done: bool,
}

fn grid_transitions(dataset: &TrajectoryDataset) -> Result<Vec<GridTransition>> {
    if dataset.obs_dim() != 2 || dataset.act_dim() != 1 {
        return Err(PorError::InvalidArgument(
            "tabular methods need 2-d cell states and a single action index".into(),
        ));
    }
    dataset
        .transitions()
        .iter()
        .map(|t| {
            let a = t
                .action
                .as_ref()
                .ok_or_else(|| PorError::ActionFree("tabular stitching needs actions".into()))?[0];
            if a.fract() != 0.0 || !(0.0..8.0).contains(&a) {
                return Err(PorError::InvalidArgument(format!("action {a} is not a grid action index")));
            }
            Ok(GridTransition {
                from: state_to_cell(&t.state),
                action: a as usize,
                to: state_to_cell(&t.next_state),
                reward: t.reward,
                done: t.done,
            })
        })
        .collect()
}

/// Bellman optimality restricted to the dataset's transitions, with the
/// goal pinned at zero. Values are grown from "unknown" so states that can
/// never reach the goal stay undefined instead of taking a sentinel.
pub fn dataset_value_iteration(dataset: &TrajectoryDataset, world: &GridWorld, gamma: f64) -> Result<TabularValue> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(PorError::InvalidArgument(format!("gamma {gamma} outside (0, 1]")));
    }
    let tolerance = 1e-10;
    let trans = grid_transitions(dataset)?;
    let mut values: BTreeMap<Cell, f64> = BTreeMap::new();
    values.insert(world.goal, 0.0);
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        // Synchronous sweep: every state takes the max over its transitions
        // against the previous sweep's values.
        let mut fresh: BTreeMap<Cell, f64> = BTreeMap::new();
        fresh.insert(world.goal, 0.0);
        for t in trans.iter().filter(|t| t.from != world.goal) {
            let target = if t.done {
                Some(t.reward)
            } else {
                values.get(&t.to).map(|v| t.reward + gamma * v)
            };
            if let Some(q) = target {
                let e = fresh.entry(t.from).or_insert(f64::NEG_INFINITY);
                *e = e.max(q);
            }
        }
        let settled = fresh.len() == values.len()
            && fresh.iter().all(|(c, v)| values.get(c).is_some_and(|old| (v - old).abs() <= tolerance));
        values = fresh;
        if settled {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(PorError::Diverged {
                step: sweeps as u64,
                reason: "dataset value iteration did not settle".into(),
            });
        }
    }
    if values.values().any(|v| !v.is_finite()) {
        return Err(PorError::NonFinite("tabular value".into()));
    }
    let sources: BTreeSet<Cell> = trans.iter().map(|t| t.from).filter(|&c| c != world.goal).collect();
    let disconnected: BTreeSet<Cell> = sources.iter().copied().filter(|c| !values.contains_key(c)).collect();
    if values.len() == 1 && !sources.is_empty() {
        return Err(PorError::GoalUnreachable {
            disconnected: disconnected.iter().copied().collect(),
        });
    }
    Ok(TabularValue {
        values,
        disconnected,
        goal: world.goal,
        gamma,
        tolerance,
        sweeps,
    })
}

fn backup(world: &GridWorld, v: &TabularValue, to: Cell) -> Option<f64> {
    let r = if to == world.goal { 0.0 } else { -1.0 };
    v.value(to).map(|x| r + v.gamma * x)
}

fn argmax_ties(cands: &[(usize, f64)]) -> Vec<usize> {
    let best = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut ties: Vec<usize> = cands.iter().filter(|c| c.1 == best).map(|c| c.0).collect();
    ties.sort_unstable();
    ties.dedup();
    ties
}

/// Candidate dataset actions from `s`, scored by the one-step backup through
/// the value of the state they reach.
pub fn action_stitch_candidates(v: &TabularValue, dataset: &TrajectoryDataset, world: &GridWorld, s: Cell) -> Result<Vec<(usize, f64)>> {
    let trans = grid_transitions(dataset)?;
    let mut seen = false;
    let mut cands = Vec::new();
    for t in trans.iter().filter(|t| t.from == s) {
        seen = true;
        if let Some(q) = backup(world, v, t.to) {
            cands.push((t.action, q));
        }
    }
    if !seen {
        return Err(PorError::InvalidArgument(format!("{s:?} is not a source state in the dataset")));
    }
    if cands.is_empty() {
        return Err(PorError::InvalidArgument(format!("no dataset action from {s:?} reaches a valued state")));
    }
    Ok(cands)
}

/// All eight actions under the true dynamics, kept only when they land on a
/// state with a defined value.
pub fn state_stitch_candidates(v: &TabularValue, world: &GridWorld, s: Cell) -> Result<Vec<(usize, f64)>> {
    if !world.in_bounds(s) {
        return Err(PorError::InvalidArgument(format!("{s:?} out of bounds")));
    }
    let mut cands = Vec::new();
    for a in 0..8 {
        let n = world.next_cell(s, a)?;
        if let Some(q) = backup(world, v, n) {
            cands.push((a, q));
        }
    }
    if cands.is_empty() {
        return Err(PorError::InvalidArgument(format!("no action from {s:?} reaches a valued state")));
    }
    Ok(cands)
}

/// Best recorded action from `s`; the lowest action index wins ties.
pub fn action_stitch_action(v: &TabularValue, dataset: &TrajectoryDataset, world: &GridWorld, s: Cell) -> Result<usize> {
    Ok(argmax_ties(&action_stitch_candidates(v, dataset, world, s)?)[0])
}

/// Best action under the true dynamics from `s`; the lowest index wins ties.
pub fn state_stitch_action(v: &TabularValue, world: &GridWorld, s: Cell) -> Result<usize> {
    Ok(argmax_ties(&state_stitch_candidates(v, world, s)?)[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stitching {
    Action,
    State,
}

impl Stitching {
    pub fn name(self) -> &'static str {
        match self {
            Stitching::Action => "action-stitching",
            Stitching::State => "state-stitching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StitchPath {
    pub first_action: usize,
    pub cells: Vec<Cell>,
    pub reached_goal: bool,
}

impl StitchPath {
    pub fn steps(&self) -> usize {
        self.cells.len() - 1
    }
}

/// Roll the stitched policy out from the start under the true dynamics,
/// once per tied best first action. Rollouts stop at the goal, when no
/// action is available, or after `width * height` steps.
pub fn stitch_rollouts(v: &TabularValue, dataset: &TrajectoryDataset, world: &GridWorld, method: Stitching) -> Result<Vec<StitchPath>> {
    let choose_all = |s: Cell| -> Result<Vec<usize>> {
        let cands = match method {
            Stitching::Action => action_stitch_candidates(v, dataset, world, s)?,
            Stitching::State => state_stitch_candidates(v, world, s)?,
        };
        Ok(argmax_ties(&cands))
    };
    let limit = (world.width * world.height) as usize;
    let mut paths = Vec::new();
    for first in choose_all(world.start)? {
        let mut s = world.start;
        let mut cells = vec![s];
        let mut a = Some(first);
        while let Some(act) = a {
            s = world.next_cell(s, act)?;
            cells.push(s);
            if s == world.goal || cells.len() > limit {
                break;
            }
            a = choose_all(s).ok().map(|t| t[0]);
        }
        paths.push(StitchPath {
            first_action: first,
            reached_goal: s == world.goal,
            cells,
        });
    }
    Ok(paths)
}

/// ASCII picture of a path: `S` start, `G` goal, `*` visited, `.` dataset
/// states, blank elsewhere. Top row printed first.
pub fn render_path(world: &GridWorld, dataset: &TrajectoryDataset, path: &[Cell]) -> String {
    let data: BTreeSet<Cell> = dataset
        .transitions()
        .iter()
        .flat_map(|t| [state_to_cell(&t.state), state_to_cell(&t.next_state)])
        .collect();
    let on_path: BTreeSet<Cell> = path.iter().copied().collect();
    let mut out = String::new();
    for y in (0..world.height).rev() {
        for x in 0..world.width {
            let c = (x, y);
            out.push(if c == world.start {
                'S'
            } else if c == world.goal {
                'G'
            } else if on_path.contains(&c) {
                '*'
            } else if data.contains(&c) {
                '.'
            } else {
                ' '
            });
        }
        out.push('\n');
    }
    out
}
