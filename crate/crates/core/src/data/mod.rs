//! Offline datasets: transitions grouped into trajectories, return
//! accounting, filtering and the main / more / mix split schemes.

mod batch;
mod format;

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PorError, Result};

pub use batch::{Batch, Columns};
pub use format::{
    dataset_hash, decode_dataset, encode_dataset, export_csv, import_csv, load_dataset,
    save_dataset,
};

/// One `(s, a, r, s', done)` tuple. `action` is `None` for action-free data.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Option<Vec<f64>>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>, done: bool) -> Self {
        Transition {
            state,
            action: Some(action),
            reward,
            next_state,
            done,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub env_id: String,
    pub seed: u64,
}

/// Transitions in trajectory order plus the trajectory partition.
///
/// Invariants (checked by [`TrajectoryDataset::validate`]):
/// * every state / next-state has `obs_dim` entries, every present action
///   `act_dim`, every reward is finite;
/// * within a trajectory, `next_state` of step `t` equals `state` of `t+1`;
/// * only the last transition of a trajectory may be terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    transitions: Vec<Transition>,
    /// Exclusive end index of every trajectory, nondecreasing, last == len.
    ends: Vec<usize>,
    obs_dim: usize,
    act_dim: usize,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    pub fn empty(obs_dim: usize, act_dim: usize) -> Self {
        TrajectoryDataset {
            transitions: Vec::new(),
            ends: Vec::new(),
            obs_dim,
            act_dim,
            meta: DatasetMeta::default(),
        }
    }

    /// Build from a list of trajectories and validate.
    pub fn from_trajectories(
        obs_dim: usize,
        act_dim: usize,
        trajectories: Vec<Vec<Transition>>,
    ) -> Result<Self> {
        let mut d = Self::empty(obs_dim, act_dim);
        for t in trajectories {
            d.push_trajectory(t);
        }
        d.validate()?;
        Ok(d)
    }

    pub(crate) fn from_parts(
        transitions: Vec<Transition>,
        ends: Vec<usize>,
        obs_dim: usize,
        act_dim: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let d = TrajectoryDataset {
            transitions,
            ends,
            obs_dim,
            act_dim,
            meta,
        };
        d.validate()?;
        Ok(d)
    }

    /// Append without validating; callers validate once at the end.
    pub fn push_trajectory(&mut self, trajectory: Vec<Transition>) {
        self.transitions.extend(trajectory);
        self.ends.push(self.transitions.len());
    }

    pub fn with_meta(mut self, meta: DatasetMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.ends.len()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn trajectory_ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn trajectory_range(&self, i: usize) -> Range<usize> {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        start..self.ends[i]
    }

    pub fn trajectory(&self, i: usize) -> &[Transition] {
        &self.transitions[self.trajectory_range(i)]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[Transition]> + '_ {
        (0..self.ends.len()).map(move |i| self.trajectory(i))
    }

    /// True when every transition carries an action.
    pub fn has_actions(&self) -> bool {
        self.transitions.iter().all(|t| t.action.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 {
            return Err(PorError::InvalidArgument("obs_dim must be positive".into()));
        }
        if self.ends.windows(2).any(|w| w[0] > w[1])
            || self.ends.last().copied().unwrap_or(0) != self.transitions.len()
        {
            return Err(PorError::Contract(
                "trajectory boundaries do not partition the transitions".into(),
            ));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.state.len() != self.obs_dim || t.next_state.len() != self.obs_dim {
                return Err(PorError::DimensionMismatch {
                    context: "transition state",
                    expected: self.obs_dim,
                    got: if t.state.len() != self.obs_dim { t.state.len() } else { t.next_state.len() },
                });
            }
            if let Some(a) = &t.action {
                if a.len() != self.act_dim {
                    return Err(PorError::DimensionMismatch {
                        context: "transition action",
                        expected: self.act_dim,
                        got: a.len(),
                    });
                }
            }
            if !t.reward.is_finite() {
                return Err(PorError::NonFinite(format!("reward of transition {i}")));
            }
        }
        for (k, traj) in self.trajectories().enumerate() {
            for (j, pair) in traj.windows(2).enumerate() {
                if pair[0].next_state != pair[1].state {
                    return Err(PorError::Contract(format!(
                        "trajectory {k} breaks at step {j}: next_state != following state"
                    )));
                }
                if pair[0].done {
                    return Err(PorError::Contract(format!(
                        "trajectory {k} has a terminal transition at step {j} before its end"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `sum_t gamma^t r_t` per trajectory.
    pub fn compute_returns(&self, gamma: f64) -> Result<Vec<f64>> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(PorError::InvalidArgument(format!("gamma {gamma} outside (0, 1]")));
        }
        Ok(self
            .trajectories()
            .enumerate()
            .map(|(i, traj)| {
                if traj.is_empty() {
                    log::warn!("trajectory {i} is empty; its return is 0");
                }
                discounted_sum(traj.iter().map(|t| t.reward), gamma)
            })
            .collect())
    }

    /// Keep the `ceil(x_percent% * n)` trajectories with the highest
    /// undiscounted return. Ties go to the earlier trajectory; kept
    /// trajectories stay in their original order.
    pub fn filter_top_fraction(&self, x_percent: f64) -> Result<Self> {
        if !(x_percent > 0.0 && x_percent <= 100.0) {
            return Err(PorError::InvalidArgument(format!(
                "filter percentage {x_percent} outside (0, 100]"
            )));
        }
        let returns = self.compute_returns(1.0)?;
        let n = returns.len();
        let keep = ((x_percent / 100.0) * n as f64 - 1e-9).ceil().max(0.0) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        // Stable sort keeps the earlier index first among equal returns.
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]));
        let mut kept = order[..keep.min(n)].to_vec();
        kept.sort_unstable();
        Ok(self.select(&kept))
    }

    /// New dataset containing the given trajectories in the given order.
    pub fn select(&self, trajectory_indices: &[usize]) -> Self {
        let mut out = Self::empty(self.obs_dim, self.act_dim).with_meta(self.meta.clone());
        for &i in trajectory_indices {
            out.push_trajectory(self.trajectory(i).to_vec());
        }
        out
    }

    /// Concatenate trajectories of `other` after ours.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        if other.obs_dim != self.obs_dim || (other.act_dim != self.act_dim && !other.is_empty()) {
            return Err(PorError::DimensionMismatch {
                context: "dataset merge",
                expected: self.obs_dim,
                got: other.obs_dim,
            });
        }
        let mut out = self.clone();
        for t in other.trajectories() {
            out.push_trajectory(t.to_vec());
        }
        Ok(out)
    }

    /// Copy with every action replaced by the absence marker.
    pub fn without_actions(&self) -> Self {
        let mut out = self.clone();
        out.transitions.iter_mut().for_each(|t| t.action = None);
        out
    }

    /// Copy with rewards and terminal flags recomputed from the states.
    pub fn relabeled<F>(&self, mut label: F) -> Self
    where
        F: FnMut(&Transition) -> (f64, bool),
    {
        let mut out = self.clone();
        out.transitions.iter_mut().for_each(|t| {
            let (r, d) = label(t);
            t.reward = r;
            t.done = d;
        });
        out
    }

    /// Partition by whole trajectories. The first `round(fraction_e * n)`
    /// trajectories of a seeded shuffle form `D_e`, the rest `D_o`.
    ///
    /// * `Main`: `(D_e, D_o)`; the main training scheme only ever reads `D_e`.
    /// * `More`: `(D_e ∪ D_o, ∅)`.
    /// * `Mix`: `(D_e, D_o)`, with `D_o` stripped of actions when
    ///   `action_free_supplement` is set.
    pub fn split(&self, spec: &SplitSpec, seed: u64) -> Result<(Self, Self)> {
        spec.validate()?;
        let n = self.num_trajectories();
        let n_e = (spec.fraction_e * n as f64).round() as usize;
        if n_e == 0 {
            return Err(PorError::InvalidArgument(format!(
                "fraction {} of {n} trajectories leaves D_e empty",
                spec.fraction_e
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if n_e < n {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let (mut e_idx, mut o_idx) = (order[..n_e].to_vec(), order[n_e..].to_vec());
        e_idx.sort_unstable();
        o_idx.sort_unstable();
        let (d_e, d_o) = (self.select(&e_idx), self.select(&o_idx));
        Ok(match spec.scheme {
            SplitScheme::Main => (d_e, d_o),
            SplitScheme::More => (d_e.merged(&d_o)?, Self::empty(self.obs_dim, self.act_dim)),
            SplitScheme::Mix if spec.action_free_supplement => (d_e, d_o.without_actions()),
            SplitScheme::Mix => (d_e, d_o),
        })
    }

    /// Apply `f` to every state and next state.
    pub fn map_states<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Self {
        let mut out = self.clone();
        for t in &mut out.transitions {
            t.state = f(&t.state);
            t.next_state = f(&t.next_state);
        }
        out
    }
}

pub(crate) fn discounted_sum(rewards: impl Iterator<Item = f64>, gamma: f64) -> f64 {
    let mut g = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += g * r;
        g *= gamma;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    Main,
    More,
    Mix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scheme: SplitScheme,
    pub fraction_e: f64,
    pub action_free_supplement: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fraction_e > 0.0 && self.fraction_e <= 1.0 {
            Ok(())
        } else {
            Err(PorError::InvalidArgument(format!(
                "fraction_e {} outside (0, 1]",
                self.fraction_e
            )))
        }
    }
}

/// Per-dimension state standardisation. Off by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateNormalizer {
    pub fn fit(dataset: &TrajectoryDataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(PorError::InvalidArgument("cannot normalise an empty dataset".into()));
        }
        let d = dataset.obs_dim();
        let n = dataset.len() as f64;
        let mut mean = vec![0.0; d];
        for t in dataset.transitions() {
            for (m, s) in mean.iter_mut().zip(&t.state) {
                *m += s / n;
            }
        }
        let mut var = vec![0.0; d];
        for t in dataset.transitions() {
            for ((v, s), m) in var.iter_mut().zip(&t.state).zip(&mean) {
                *v += (s - m) * (s - m) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(1e-3)).collect();
        Ok(StateNormalizer { mean, std })
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect()
    }

    pub fn invert(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| x * sd + m)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D chain trajectories with the given per-step rewards.
    pub(crate) fn chain_dataset(rewards: &[Vec<f64>]) -> TrajectoryDataset {
        let trajs = rewards
            .iter()
            .enumerate()
            .map(|(k, rs)| {
                rs.iter()
                    .enumerate()
                    .map(|(t, &r)| {
                        let s = vec![k as f64 * 100.0 + t as f64];
                        let sp = vec![k as f64 * 100.0 + t as f64 + 1.0];
                        Transition::new(s, vec![1.0], r, sp, t + 1 == rs.len())
                    })
                    .collect()
            })
            .collect();
        TrajectoryDataset::from_trajectories(1, 1, trajs).unwrap()
    }

    fn single_step_returns(returns: &[f64]) -> TrajectoryDataset {
        chain_dataset(&returns.iter().map(|r| vec![*r]).collect::<Vec<_>>())
    }

    #[test]
    fn returns_examples() {
        let d = chain_dataset(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(d.compute_returns(1.0).unwrap(), vec![6.0]);
        assert_eq!(d.compute_returns(0.5).unwrap(), vec![2.75]);
        let mut e = TrajectoryDataset::empty(1, 1);
        e.push_trajectory(vec![]);
        assert_eq!(e.compute_returns(0.99).unwrap(), vec![0.0]);
        assert!(d.compute_returns(0.0).is_err());
    }

    #[test]
    fn filter_keeps_best() {
        let d = single_step_returns(&(1..=10).map(f64::from).collect::<Vec<_>>());
        let top = d.filter_top_fraction(10.0).unwrap();
        assert_eq!(top.num_trajectories(), 1);
        assert_eq!(top.transitions()[0].reward, 10.0);
        assert_eq!(d.filter_top_fraction(100.0).unwrap(), d);
    }

    #[test]
    fn filter_tie_break_prefers_earlier() {
        let d = single_step_returns(&[5.0, 5.0, 1.0, 0.0]);
        let top = d.filter_top_fraction(25.0).unwrap();
        assert_eq!(top.num_trajectories(), 1);
        assert_eq!(top.trajectory(0), d.trajectory(0));
    }

    #[test]
    fn split_fractions() {
        let d = single_step_returns(&[0.0; 10]);
        let spec = SplitSpec {
            scheme: SplitScheme::Main,
            fraction_e: 1.0,
            action_free_supplement: false,
        };
        let (e, o) = d.split(&spec, 3).unwrap();
        assert_eq!(e, d);
        assert!(o.is_empty());
        let spec = SplitSpec { fraction_e: 0.3, ..spec };
        let (e, o) = d.split(&spec, 3).unwrap();
        assert_eq!((e.num_trajectories(), o.num_trajectories()), (3, 7));
    }

    #[test]
    fn mix_strips_supplement_actions() {
        let d = single_step_returns(&[0.0; 10]);
        let spec = SplitSpec {
            scheme: SplitScheme::Mix,
            fraction_e: 0.3,
            action_free_supplement: true,
        };
        let (e, o) = d.split(&spec, 9).unwrap();
        assert!(e.has_actions());
        assert!(o.transitions().iter().all(|t| t.action.is_none()));
    }

    #[test]
    fn split_rejects_empty_expert_set() {
        let d = single_step_returns(&[0.0; 3]);
        let spec = SplitSpec {
            scheme: SplitScheme::Main,
            fraction_e: 0.1,
            action_free_supplement: false,
        };
        assert!(d.split(&spec, 0).is_err());
    }

    #[test]
    fn validate_catches_broken_chain() {
        let t0 = Transition::new(vec![0.0], vec![0.0], 0.0, vec![1.0], false);
        let t1 = Transition::new(vec![5.0], vec![0.0], 0.0, vec![6.0], true);
        assert!(TrajectoryDataset::from_trajectories(1, 1, vec![vec![t0, t1]]).is_err());
    }

    #[test]
    fn normalizer_round_trip() {
        let d = chain_dataset(&[vec![0.0; 5]]);
        let n = StateNormalizer::fit(&d).unwrap();
        let s = [3.5];
        let back = n.invert(&n.apply(&s));
        assert!((back[0] - 3.5).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rewards() -> impl Strategy<Value = Vec<Vec<f64>>> {
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..6), 1..12)
        }

        proptest! {
            #[test]
            fn returns_permute_with_trajectories(rs in rewards(), gamma in 0.01f64..1.0, seed in any::<u64>()) {
                let d = chain_dataset(&rs);
                let base = d.compute_returns(gamma).unwrap();
                let mut perm: Vec<usize> = (0..rs.len()).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let shuffled = d.select(&perm).compute_returns(gamma).unwrap();
                for (k, &p) in perm.iter().enumerate() {
                    prop_assert_eq!(shuffled[k].to_bits(), base[p].to_bits());
                }
            }

            #[test]
            fn refilter_keeps_a_prefix_of_the_ranking(rs in rewards(), x in 1.0f64..100.0) {
                let d = chain_dataset(&rs);
                let once = d.filter_top_fraction(x).unwrap();
                let twice = once.filter_top_fraction(x).unwrap();
                let k = twice.num_trajectories();
                prop_assert_eq!(k, ((x / 100.0) * once.num_trajectories() as f64 - 1e-9).ceil() as usize);
                prop_assert_eq!(twice.clone(), once.filter_top_fraction(x).unwrap());
                // Whenever the size is stable the filter is idempotent.
                if k == once.num_trajectories() {
                    prop_assert_eq!(twice, once);
                }
            }

            #[test]
            fn main_and_mix_preserve_transition_count(rs in rewards(), f in 0.05f64..1.0, seed in any::<u64>(), mix in any::<bool>()) {
                let d = chain_dataset(&rs);
                let spec = SplitSpec {
                    scheme: if mix { SplitScheme::Mix } else { SplitScheme::Main },
                    fraction_e: f,
                    action_free_supplement: mix,
                };
                if let Ok((e, o)) = d.split(&spec, seed) {
                    prop_assert_eq!(e.len() + o.len(), d.len());
                    prop_assert!(e.validate().is_ok() && o.validate().is_ok());
                }
            }
        }
    }
}
