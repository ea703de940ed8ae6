//! Deterministic 8-connected gridworld.

use crate::error::{PorError, Result};

pub type Cell = (i32, i32);

/// Compass offsets for action indices 0..7: N NE E SE S SW W NW.
pub const ACTION_OFFSETS: [(i32, i32); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

pub const ACTION_NAMES: [&str; 8] = ["N", "NE", "E", "SE", "S", "SW", "W", "NW"];

pub fn action_from_name(name: &str) -> Option<usize> {
    ACTION_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridWorld {
    pub width: i32,
    pub height: i32,
    pub start: Cell,
    pub goal: Cell,
}

impl Default for GridWorld {
    fn default() -> Self {
        GridWorld {
            width: 7,
            height: 7,
            start: (0, 0),
            goal: (6, 6),
        }
    }
}

impl GridWorld {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.width && c.1 < self.height
    }

    /// Where action `a` leads from `s`; out-of-bounds moves stay put.
    pub fn next_cell(&self, s: Cell, a: usize) -> Result<Cell> {
        let (dx, dy) = *ACTION_OFFSETS
            .get(a)
            .ok_or_else(|| PorError::InvalidArgument(format!("grid action {a} not in 0..8")))?;
        let n = (s.0 + dx, s.1 + dy);
        Ok(if self.in_bounds(n) { n } else { s })
    }

    /// `(s', r, done)`: reward 0 for entering the goal, -1 otherwise.
    pub fn step(&self, s: Cell, a: usize) -> Result<(Cell, f64, bool)> {
        if !self.in_bounds(s) {
            return Err(PorError::InvalidArgument(format!("cell {s:?} out of bounds")));
        }
        let n = self.next_cell(s, a)?;
        let at_goal = n == self.goal;
        Ok((n, if at_goal { 0.0 } else { -1.0 }, at_goal))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| (x, y)))
    }
}

/// Free-function form of [`GridWorld::step`].
pub fn grid_step(env: &GridWorld, s: Cell, a: usize) -> Result<(Cell, f64, bool)> {
    env.step(s, a)
}

pub fn cell_to_state(c: Cell) -> Vec<f64> {
    vec![c.0 as f64, c.1 as f64]
}

pub fn state_to_cell(s: &[f64]) -> Cell {
    (s[0].round() as i32, s[1].round() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_right_from_five_four() {
        let g = GridWorld::default();
        let ne = action_from_name("NE").unwrap();
        assert_eq!(g.step((5, 4), ne).unwrap(), ((6, 5), -1.0, false));
    }

    #[test]
    fn entering_goal_pays_zero() {
        let g = GridWorld::default();
        assert_eq!(g.step((5, 6), 2).unwrap(), ((6, 6), 0.0, true));
        assert_eq!(g.step((5, 5), 1).unwrap(), ((6, 6), 0.0, true));
    }

    #[test]
    fn corner_clamps() {
        let g = GridWorld::default();
        assert_eq!(g.step((0, 0), 5).unwrap(), ((0, 0), -1.0, false));
        assert_eq!(g.step((0, 0), 4).unwrap(), ((0, 0), -1.0, false));
    }

    #[test]
    fn invalid_action() {
        assert!(GridWorld::default().step((0, 0), 8).is_err());
    }
}
