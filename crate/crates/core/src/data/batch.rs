//! Column-major views of a dataset for minibatch training.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::TrajectoryDataset;
use crate::error::{PorError, Result};

/// A minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    /// `None` when any transition in the batch is action-free.
    pub actions: Option<Array2<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn require_actions(&self, context: &str) -> Result<&Array2<f64>> {
        self.actions
            .as_ref()
            .ok_or_else(|| PorError::ActionFree(format!("{context} needs actions")))
    }
}

/// The whole dataset as dense arrays, for repeated sampling.
#[derive(Debug, Clone)]
pub struct Columns {
    states: Array2<f64>,
    actions: Option<Array2<f64>>,
    rewards: Vec<f64>,
    next_states: Array2<f64>,
    dones: Vec<bool>,
}

impl Columns {
    pub fn new(d: &TrajectoryDataset) -> Self {
        let (n, o, a) = (d.len(), d.obs_dim(), d.act_dim());
        let mut states = Array2::zeros((n, o));
        let mut next_states = Array2::zeros((n, o));
        let mut actions = d.has_actions().then(|| Array2::zeros((n, a)));
        for (i, t) in d.transitions().iter().enumerate() {
            states.row_mut(i).assign(&ndarray::aview1(&t.state));
            next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
            if let (Some(m), Some(act)) = (actions.as_mut(), t.action.as_ref()) {
                m.row_mut(i).assign(&ndarray::aview1(act));
            }
        }
        Columns {
            states,
            actions,
            rewards: d.transitions().iter().map(|t| t.reward).collect(),
            next_states,
            dones: d.transitions().iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn has_actions(&self) -> bool {
        self.actions.is_some()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.as_ref().map(|a| a.select(Axis(0), idx)),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: self.next_states.select(Axis(0), idx),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Result<Batch> {
        if self.is_empty() {
            return Err(PorError::InvalidArgument("cannot sample from an empty dataset".into()));
        }
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        Ok(self.gather(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;

    #[test]
    fn gather_rows() {
        let traj = vec![
            Transition::new(vec![0.0], vec![1.0], 0.5, vec![1.0], false),
            Transition::new(vec![1.0], vec![2.0], 1.5, vec![2.0], true),
        ];
        let d = TrajectoryDataset::from_trajectories(1, 1, vec![traj]).unwrap();
        let b = Columns::new(&d).gather(&[1, 1, 0]);
        assert_eq!(b.rewards, vec![1.5, 1.5, 0.5]);
        assert_eq!(b.dones, vec![true, true, false]);
        assert_eq!(b.states.column(0).to_vec(), vec![1.0, 1.0, 0.0]);
        assert_eq!(b.actions.unwrap().column(0).to_vec(), vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn action_free_batches() {
        let traj = vec![Transition::new(vec![0.0], vec![1.0], 0.0, vec![1.0], false)];
        let d = TrajectoryDataset::from_trajectories(1, 1, vec![traj]).unwrap().without_actions();
        let b = Columns::new(&d).gather(&[0]);
        assert!(b.require_actions("test").is_err());
    }
}
