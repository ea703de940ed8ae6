//! Scripted data collection in the four-room environments.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fourroom::{dist, FourRoomEnv, TaskId, WallMap, MAX_ACTION};
use crate::data::{DatasetMeta, TrajectoryDataset, Transition};
use crate::error::{PorError, Result};

const GOAL_RETRIES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorSpec {
    pub task: TaskId,
    pub n_transitions: usize,
    /// Share of transitions produced by the goal-reaching controller; the
    /// rest come from a uniform random policy.
    pub controller_fraction: f64,
    pub seed: u64,
    pub action_noise: f64,
    /// Distance at which the controller moves on to its next waypoint.
    pub waypoint_tolerance: f64,
    pub random_episode_len: usize,
}

impl CollectorSpec {
    pub fn new(task: TaskId, n_transitions: usize, seed: u64) -> Self {
        CollectorSpec {
            task,
            n_transitions,
            controller_fraction: 0.8,
            seed,
            action_noise: 0.02,
            waypoint_tolerance: 0.15,
            random_episode_len: 100,
        }
    }

    pub fn random_fraction(&self) -> f64 {
        1.0 - self.controller_fraction
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_transitions == 0 {
            return Err(PorError::InvalidArgument("n_transitions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.controller_fraction) {
            return Err(PorError::InvalidArgument(format!(
                "controller fraction {} outside [0, 1]",
                self.controller_fraction
            )));
        }
        if !(self.action_noise >= 0.0) || !(self.waypoint_tolerance > 0.0) || self.random_episode_len == 0 {
            return Err(PorError::InvalidArgument("invalid controller settings".into()));
        }
        Ok(())
    }
}

#[derive(PartialEq)]
struct Node {
    f: f64,
    cell: (usize, usize),
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* over open cells. Diagonal steps need both adjacent
/// orthogonal cells open, so paths never cut a wall corner.
pub fn astar(map: &WallMap, from: (usize, usize), to: (usize, usize)) -> Option<Vec<(usize, usize)>> {
    let (w, h) = (map.width(), map.height());
    let idx = |c: (usize, usize)| c.1 * w + c.0;
    let open = |i: i64, j: i64| i >= 0 && j >= 0 && (i as usize) < w && (j as usize) < h && !map.is_wall_cell((i as usize, j as usize));
    if !open(from.0 as i64, from.1 as i64) || !open(to.0 as i64, to.1 as i64) {
        return None;
    }
    let octile = |c: (usize, usize)| {
        let dx = c.0.abs_diff(to.0) as f64;
        let dy = c.1.abs_diff(to.1) as f64;
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let mut g = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut heap = BinaryHeap::new();
    g[idx(from)] = 0.0;
    heap.push(Node { f: octile(from), cell: from });
    while let Some(Node { f, cell }) = heap.pop() {
        if cell == to {
            let mut path = vec![to];
            let mut k = idx(to);
            while parent[k] != usize::MAX {
                k = parent[k];
                path.push((k % w, k / w));
            }
            path.reverse();
            return Some(path);
        }
        let gc = g[idx(cell)];
        if f > gc + octile(cell) + 1e-9 {
            continue;
        }
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (cell.0 as i64 + di, cell.1 as i64 + dj);
                if !open(ni, nj) {
                    continue;
                }
                if di != 0 && dj != 0 && !(open(cell.0 as i64 + di, cell.1 as i64) && open(cell.0 as i64, cell.1 as i64 + dj)) {
                    continue;
                }
                let n = (ni as usize, nj as usize);
                let cost = if di != 0 && dj != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let ng = gc + cost;
                if ng < g[idx(n)] {
                    g[idx(n)] = ng;
                    parent[idx(n)] = idx(cell);
                    heap.push(Node { f: ng + octile(n), cell: n });
                }
            }
        }
    }
    None
}

fn sample_free_point<R: Rng>(map: &WallMap, cells: &[(usize, usize)], rng: &mut R) -> [f64; 2] {
    let c = map.cell_center(cells[rng.gen_range(0..cells.len())]);
    [c[0] + rng.gen_range(-0.5..0.5), c[1] + rng.gen_range(-0.5..0.5)]
}

fn to_transition(s: [f64; 2], a: [f64; 2], r: f64, n: [f64; 2], done: bool) -> Transition {
    Transition::new(s.to_vec(), a.to_vec(), r, n.to_vec(), done)
}

/// Exactly `n_transitions` transitions, reproducible by seed. Trajectories
/// end with `done` only on a true terminal event of the task; reaching the
/// controller's own target, the horizon, or the random-episode length ends
/// a trajectory without it.
pub fn collect(spec: &CollectorSpec) -> Result<TrajectoryDataset> {
    spec.validate()?;
    let mut env = FourRoomEnv::new(spec.task);
    let cells = env.map().free_cells();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.action_noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut out = TrajectoryDataset::empty(2, 2).with_meta(DatasetMeta {
        name: format!("{}-{}", spec.task.name(), spec.n_transitions),
        env_id: spec.task.name().to_string(),
        seed: spec.seed,
    });
    let mut controller_steps = 0usize;
    while out.len() < spec.n_transitions {
        let budget = spec.n_transitions - out.len();
        let use_controller = spec.controller_fraction > 0.0
            && (spec.controller_fraction >= 1.0 || (controller_steps as f64) < spec.controller_fraction * out.len() as f64 || out.is_empty());
        let traj = if use_controller {
            let t = controller_episode(spec, &mut env, &cells, &noise, &mut rng, budget)?;
            controller_steps += t.len();
            t
        } else {
            random_episode(spec, &mut env, &cells, &mut rng, budget)
        };
        if !traj.is_empty() {
            out.push_trajectory(traj);
        }
    }
    out.validate()?;
    Ok(out)
}

fn controller_episode(
    spec: &CollectorSpec,
    env: &mut FourRoomEnv,
    cells: &[(usize, usize)],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    budget: usize,
) -> Result<Vec<Transition>> {
    let start = sample_free_point(env.map(), cells, rng);
    let start_cell = env.map().cell_of(start).expect("sampled inside the map");
    let mut plan = None;
    for _ in 0..GOAL_RETRIES {
        let goal = sample_free_point(env.map(), cells, rng);
        let goal_cell = env.map().cell_of(goal).expect("sampled inside the map");
        if let Some(path) = astar(env.map(), start_cell, goal_cell) {
            plan = Some((goal, path));
            break;
        }
    }
    let (goal, path) = plan.ok_or_else(|| {
        PorError::InvalidArgument(format!("no reachable target from {start:?} after {GOAL_RETRIES} draws"))
    })?;
    let mut waypoints: Vec<[f64; 2]> = path.iter().skip(1).map(|&c| env.map().cell_center(c)).collect();
    waypoints.pop();
    waypoints.push(goal);

    env.reset_to(start);
    let mut s = start;
    let mut next_wp = 0;
    let mut traj = Vec::new();
    let limit = env.horizon().min(budget);
    while traj.len() < limit {
        while next_wp + 1 < waypoints.len() && dist(s, waypoints[next_wp]) <= spec.waypoint_tolerance {
            next_wp += 1;
        }
        let target = waypoints[next_wp];
        let mut a = [0.0; 2];
        for k in 0..2 {
            let jitter = if spec.action_noise > 0.0 { noise.sample(rng) } else { 0.0 };
            a[k] = ((target[k] - s[k]).clamp(-MAX_ACTION, MAX_ACTION) + jitter).clamp(-MAX_ACTION, MAX_ACTION);
        }
        let o = env.step(a);
        let terminal = o.done && !o.info.truncated;
        traj.push(to_transition(s, a, o.reward, o.next_state, terminal));
        s = o.next_state;
        if o.done || (next_wp + 1 == waypoints.len() && dist(s, goal) <= spec.waypoint_tolerance) {
            break;
        }
    }
    Ok(traj)
}

fn random_episode(
    spec: &CollectorSpec,
    env: &mut FourRoomEnv,
    cells: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
    budget: usize,
) -> Vec<Transition> {
    let start = sample_free_point(env.map(), cells, rng);
    env.reset_to(start);
    let mut s = start;
    let mut traj = Vec::new();
    let limit = spec.random_episode_len.min(env.horizon()).min(budget);
    while traj.len() < limit {
        let a = [rng.gen_range(-MAX_ACTION..MAX_ACTION), rng.gen_range(-MAX_ACTION..MAX_ACTION)];
        let o = env.step(a);
        let terminal = o.done && !o.info.truncated;
        traj.push(to_transition(s, a, o.reward, o.next_state, terminal));
        s = o.next_state;
        if o.done {
            break;
        }
    }
    traj
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_transition_count() {
        let d = collect(&CollectorSpec::new(TaskId::A, 5_000, 1)).unwrap();
        assert_eq!(d.len(), 5_000);
        assert!(d.num_trajectories() > 10);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = CollectorSpec::new(TaskId::B, 2_000, 9);
        assert_eq!(collect(&spec).unwrap(), collect(&spec).unwrap());
        let other = CollectorSpec { seed: 10, ..spec };
        assert_ne!(collect(&other).unwrap().transitions(), collect(&CollectorSpec::new(TaskId::B, 2_000, 9)).unwrap().transitions());
    }

    #[test]
    fn random_actions_are_uniform() {
        let spec = CollectorSpec {
            controller_fraction: 0.0,
            ..CollectorSpec::new(TaskId::A, 20_000, 4)
        };
        let d = collect(&spec).unwrap();
        let mut counts = [[0usize; 10]; 10];
        for t in d.transitions() {
            let a = t.action.as_ref().unwrap();
            let b = |v: f64| (((v + MAX_ACTION) / (2.0 * MAX_ACTION) * 10.0) as usize).min(9);
            counts[b(a[0])][b(a[1])] += 1;
        }
        let expected = d.len() as f64 / 100.0;
        let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-squared with 99 degrees of freedom.
        assert!(chi2 < 148.23, "chi2 = {chi2}");
    }

    #[test]
    fn astar_goes_through_doors() {
        let env = FourRoomEnv::new(TaskId::A);
        let m = env.map();
        let from = m.cell_of([-5.0, -5.0]).unwrap();
        let to = m.cell_of([4.0, 4.0]).unwrap();
        let path = astar(m, from, to).unwrap();
        assert_eq!(path[0], from);
        assert_eq!(*path.last().unwrap(), to);
        assert!(path.iter().all(|&c| !m.is_wall_cell(c)));
        assert!(path.windows(2).all(|w| w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1));
        assert!(astar(m, from, (0, 0)).is_none());
    }

    #[test]
    fn controller_reaches_its_targets() {
        let spec = CollectorSpec {
            controller_fraction: 1.0,
            ..CollectorSpec::new(TaskId::A, 3_000, 2)
        };
        let d = collect(&spec).unwrap();
        // Most episodes end well before the horizon.
        let short = d.trajectories().filter(|t| t.len() < 500).count();
        assert!(short * 10 >= d.num_trajectories() * 9);
    }

    #[test]
    fn never_inside_walls() {
        let d = collect(&CollectorSpec::new(TaskId::C, 5_000, 5)).unwrap();
        let env = FourRoomEnv::new(TaskId::C);
        for t in d.transitions() {
            assert!(!env.map().blocked([t.next_state[0], t.next_state[1]]));
        }
    }
}
