//! Gridworld layouts with scripted trajectories and single random
//! transitions, and their conversion to datasets.

use super::grid::{action_from_name, cell_to_state, Cell, GridWorld, ACTION_NAMES};
use crate::data::{DatasetMeta, TrajectoryDataset, Transition};
use crate::error::{PorError, Result};

const CANONICAL: &str = include_str!("../../assets/toy_canonical.layout");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyLayout {
    pub world: GridWorld,
    /// Action sequences, each starting at `world.start`.
    pub trajectories: Vec<Vec<usize>>,
    /// `(state, action)` pairs recorded as one-step trajectories.
    pub random: Vec<(Cell, usize)>,
}

impl ToyLayout {
    /// The shipped layout used by the `toy` command.
    pub fn canonical() -> Self {
        Self::parse(CANONICAL).expect("shipped layout parses")
    }

    /// Text format: `size W H`, `start X Y`, `goal X Y`, any number of
    /// `trajectory A1 A2 ...` and `random X Y A` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut world = GridWorld::default();
        let mut trajectories = Vec::new();
        let mut random = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| PorError::Config(format!("layout line {}: {msg}", no + 1));
            let mut words = line.split_whitespace();
            let key = words.next().unwrap();
            let rest: Vec<&str> = words.collect();
            let ints = |n: usize| -> Result<Vec<i32>> {
                if rest.len() != n {
                    return Err(bad(&format!("`{key}` takes {n} values")));
                }
                rest.iter()
                    .map(|w| w.parse::<i32>().map_err(|_| bad("expected an integer")))
                    .collect()
            };
            let action = |w: &str| action_from_name(w).ok_or_else(|| bad(&format!("unknown action `{w}`")));
            match key {
                "size" => {
                    let v = ints(2)?;
                    if v[0] <= 0 || v[1] <= 0 {
                        return Err(bad("size must be positive"));
                    }
                    world.width = v[0];
                    world.height = v[1];
                }
                "start" => {
                    let v = ints(2)?;
                    world.start = (v[0], v[1]);
                }
                "goal" => {
                    let v = ints(2)?;
                    world.goal = (v[0], v[1]);
                }
                "trajectory" => {
                    trajectories.push(rest.iter().map(|w| action(w)).collect::<Result<Vec<_>>>()?);
                }
                "random" => {
                    if rest.len() != 3 {
                        return Err(bad("`random` takes X Y ACTION"));
                    }
                    let x = rest[0].parse::<i32>().map_err(|_| bad("expected an integer"))?;
                    let y = rest[1].parse::<i32>().map_err(|_| bad("expected an integer"))?;
                    random.push(((x, y), action(rest[2])?));
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(ToyLayout { world, trajectories, random })
    }

    pub fn to_text(&self) -> String {
        let w = &self.world;
        let mut out = format!(
            "size {} {}\nstart {} {}\ngoal {} {}\n",
            w.width, w.height, w.start.0, w.start.1, w.goal.0, w.goal.1
        );
        for t in &self.trajectories {
            let names: Vec<&str> = t.iter().map(|&a| ACTION_NAMES[a]).collect();
            out.push_str(&format!("trajectory {}\n", names.join(" ")));
        }
        for ((x, y), a) in &self.random {
            out.push_str(&format!("random {x} {y} {}\n", ACTION_NAMES[*a]));
        }
        out
    }
}

fn grid_transition(world: &GridWorld, s: Cell, a: usize) -> Result<(Transition, Cell)> {
    let (n, r, done) = world.step(s, a)?;
    Ok((
        Transition::new(cell_to_state(s), vec![a as f64], r, cell_to_state(n), done),
        n,
    ))
}

/// Each scripted trajectory must run from the start into the goal and stop
/// there; random transitions become one-step trajectories.
pub fn build_toy_dataset(layout: &ToyLayout) -> Result<TrajectoryDataset> {
    let world = &layout.world;
    if !world.in_bounds(world.start) || !world.in_bounds(world.goal) {
        return Err(PorError::Config("start or goal outside the grid".into()));
    }
    let mut trajs = Vec::new();
    for (k, actions) in layout.trajectories.iter().enumerate() {
        let mut s = world.start;
        let mut traj = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            if s == world.goal {
                return Err(PorError::Config(format!(
                    "trajectory {k} continues past the goal at step {i}"
                )));
            }
            let (t, n) = grid_transition(world, s, a)?;
            traj.push(t);
            s = n;
        }
        if s != world.goal {
            return Err(PorError::Config(format!(
                "trajectory {k} ends at {s:?}, not at the goal {:?}",
                world.goal
            )));
        }
        trajs.push(traj);
    }
    for &(s, a) in &layout.random {
        if !world.in_bounds(s) {
            return Err(PorError::Config(format!("random transition at {s:?} is off the grid")));
        }
        trajs.push(vec![grid_transition(world, s, a)?.0]);
    }
    Ok(TrajectoryDataset::from_trajectories(2, 1, trajs)?.with_meta(DatasetMeta {
        name: "toy".into(),
        env_id: "gridworld".into(),
        seed: 0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_layout_builds() {
        let l = ToyLayout::canonical();
        let d = build_toy_dataset(&l).unwrap();
        assert_eq!(d.num_trajectories(), 2 + l.random.len());
        assert_eq!(d.trajectory(0).len(), 12);
        assert_eq!(d.trajectory(1).len(), 14);
    }

    #[test]
    fn text_round_trip() {
        let l = ToyLayout::canonical();
        assert_eq!(ToyLayout::parse(&l.to_text()).unwrap(), l);
    }

    #[test]
    fn disconnected_path_is_rejected() {
        let mut l = ToyLayout::canonical();
        l.trajectories[0].pop();
        assert!(build_toy_dataset(&l).is_err());
    }

    #[test]
    fn no_random_transitions() {
        let mut l = ToyLayout::canonical();
        l.random.clear();
        assert_eq!(build_toy_dataset(&l).unwrap().num_trajectories(), 2);
    }
}
