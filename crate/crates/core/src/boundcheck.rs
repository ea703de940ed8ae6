//! Empirical check of the single-step optimality gap bound
//! `||pi(s, g(s)) - a*|| <= (L1 + L2)||g(s) - s'|| + ||a_g - a*|| + eps`
//! on a linear MDP whose inverse dynamics are known exactly.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{TrajectoryDataset, Transition};
use crate::error::{PorError, Result};
use crate::policies::PorAgent;
use crate::trainer::{self, TrainConfig};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `s' = s + B a` with `B` of full column rank. The inverse transition
/// operator is `P(s, s') = B^+ (s' - s)`, the reward
/// `-||s' - (1 - kappa) s||^2`, and the reward-optimal action
/// `a*(s) = -kappa B^+ s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSmoothMdp {
    /// Row-major `state_dim x action_dim`.
    b: Vec<Vec<f64>>,
    /// Row-major `action_dim x state_dim`.
    b_pinv: Vec<Vec<f64>>,
    pub kappa: f64,
}

/// Solve `m x = rhs` for a small dense system by Gauss-Jordan elimination
/// with partial pivoting.
fn solve(mut m: Vec<Vec<f64>>, mut rhs: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        let p = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= p);
        rhs[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..n {
                        m[r][c] -= f * m[col][c];
                    }
                    for c in 0..rhs[r].len() {
                        rhs[r][c] -= f * rhs[col][c];
                    }
                }
            }
        }
    }
    Some(rhs)
}

impl SyntheticSmoothMdp {
    pub fn new(b: Vec<Vec<f64>>, kappa: f64) -> Result<Self> {
        let sd = b.len();
        let ad = b.first().map_or(0, Vec::len);
        if sd == 0 || ad == 0 || ad > sd || b.iter().any(|r| r.len() != ad) {
            return Err(PorError::InvalidArgument("B must be a tall state_dim x action_dim matrix".into()));
        }
        // B^+ = (B^T B)^{-1} B^T.
        let btb: Vec<Vec<f64>> = (0..ad)
            .map(|i| (0..ad).map(|j| (0..sd).map(|k| b[k][i] * b[k][j]).sum()).collect())
            .collect();
        let bt: Vec<Vec<f64>> = (0..ad).map(|i| (0..sd).map(|k| b[k][i]).collect()).collect();
        let b_pinv = solve(btb, bt).ok_or_else(|| PorError::InvalidArgument("B is not of full column rank".into()))?;
        Ok(SyntheticSmoothMdp { b, b_pinv, kappa })
    }

    /// A fixed 3-state, 2-action instance.
    pub fn standard() -> Self {
        Self::new(vec![vec![1.0, 0.2], vec![-0.3, 0.8], vec![0.5, 0.5]], 0.2).expect("full rank")
    }

    pub fn state_dim(&self) -> usize {
        self.b.len()
    }

    pub fn action_dim(&self) -> usize {
        self.b[0].len()
    }

    pub fn step(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.b)
            .map(|(si, row)| si + row.iter().zip(a).map(|(b, a)| b * a).sum::<f64>())
            .collect()
    }

    /// `B^+ (s' - s)`.
    pub fn inverse(&self, s: &[f64], next: &[f64]) -> Vec<f64> {
        let d = sub(next, s);
        self.b_pinv.iter().map(|row| row.iter().zip(&d).map(|(p, x)| p * x).sum()).collect()
    }

    pub fn optimal_action(&self, s: &[f64]) -> Vec<f64> {
        self.b_pinv
            .iter()
            .map(|row| -self.kappa * row.iter().zip(s).map(|(p, x)| p * x).sum::<f64>())
            .collect()
    }

    pub fn reward(&self, s: &[f64], next: &[f64]) -> f64 {
        -next
            .iter()
            .zip(s)
            .map(|(n, s)| (n - (1.0 - self.kappa) * s).powi(2))
            .sum::<f64>()
    }

    /// Lipschitz constant of `P(s, .)`: the spectral norm of `B^+`, by
    /// power iteration on `B^+ (B^+)^T`.
    pub fn inverse_lipschitz(&self) -> f64 {
        let p = &self.b_pinv;
        let ad = p.len();
        let m: Vec<Vec<f64>> = (0..ad)
            .map(|i| (0..ad).map(|j| p[i].iter().zip(&p[j]).map(|(x, y)| x * y).sum()).collect())
            .collect();
        let mut v = vec![1.0; ad];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w: Vec<f64> = m.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let n = norm(&w);
            if n == 0.0 {
                return 0.0;
            }
            lambda = n / norm(&v);
            v = w.iter().map(|x| x / n).collect();
        }
        lambda.sqrt()
    }

    /// Trajectories from uniform starts in `[-1, 1]^d`, behaviour actions
    /// `a*(s)` plus Gaussian noise.
    pub fn dataset(&self, trajectories: usize, length: usize, noise: f64, seed: u64) -> Result<TrajectoryDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).map_err(|e| PorError::InvalidArgument(e.to_string()))?;
        let mut trajs = Vec::with_capacity(trajectories);
        for _ in 0..trajectories {
            let mut s: Vec<f64> = (0..self.state_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut t = Vec::with_capacity(length);
            for _ in 0..length {
                let a: Vec<f64> = self.optimal_action(&s).iter().map(|x| x + normal.sample(&mut rng)).collect();
                let n = self.step(&s, &a);
                t.push(Transition::new(s.clone(), a, self.reward(&s, &n), n.clone(), false));
                s = n;
            }
            trajs.push(t);
        }
        TrajectoryDataset::from_trajectories(self.state_dim(), self.action_dim(), trajs)
    }
}

/// Largest `||f(x1) - f(x2)|| / ||x1 - x2||` over sampled pairs; a lower
/// bound on the true constant. Uses every pair when `pair_count` covers
/// them all; coincident pairs are skipped.
pub fn estimate_lipschitz<F>(f: F, inputs: &[Vec<f64>], pair_count: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = inputs.len();
    if n < 2 {
        return Err(PorError::InvalidArgument("need at least two samples".into()));
    }
    let outputs = inputs.iter().map(|x| f(x)).collect::<Result<Vec<_>>>()?;
    let ratio = |i: usize, j: usize| {
        let dx = norm(&sub(&inputs[i], &inputs[j]));
        (dx > 0.0).then(|| norm(&sub(&outputs[i], &outputs[j])) / dx)
    };
    let total = n * (n - 1) / 2;
    let mut best: f64 = 0.0;
    if pair_count >= total {
        for i in 0..n {
            for j in i + 1..n {
                if let Some(r) = ratio(i, j) {
                    best = best.max(r);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..pair_count {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if let Some(r) = ratio(i, j) {
                best = best.max(r);
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    /// `||pi(s, g(s)) - a*||`.
    pub lhs: f64,
    /// The four triangle-inequality pieces:
    /// `||pi(s,g) - pi(s,s')||`, `||pi(s,s') - a||`, `||a - a_g||`,
    /// `||a_g - a*||`.
    pub pieces: [f64; 4],
    /// `(L1 + L2) ||g(s) - s'||`.
    pub l1: f64,
    /// `||a_g - a*||`.
    pub l2: f64,
    /// `eps`.
    pub l3: f64,
    pub rhs: f64,
    pub violated: bool,
}

impl BoundSample {
    pub fn decomposition_holds(&self) -> bool {
        self.lhs <= self.pieces.iter().sum::<f64>() * (1.0 + 1e-12) + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub samples: Vec<BoundSample>,
    /// Exact, from the known inverse dynamics.
    pub l1_constant: f64,
    /// Empirical lower bound on the execute-policy's Lipschitz constant in
    /// its next-state argument.
    pub l2_constant: f64,
    /// Largest execute-policy error on dataset pairs.
    pub epsilon: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn violation_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.violated).count() as f64 / self.samples.len() as f64
    }

    pub fn decomposition_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 1.0;
        }
        self.samples.iter().filter(|s| s.decomposition_holds()).count() as f64 / self.samples.len() as f64
    }

    /// `sup (l1 + l2 + l3)` over samples.
    pub fn sup_rhs(&self) -> f64 {
        self.samples.iter().map(|s| s.rhs).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lhs,exec_gap,fit_error,inverse_gap,guide_gap,l1,l2,l3,rhs,violated\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                s.lhs, s.pieces[0], s.pieces[1], s.pieces[2], s.pieces[3], s.l1, s.l2, s.l3, s.rhs, s.violated as u8
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{{\n  samples: {},\n  l1_constant: {},\n  l2_constant_lower_bound: {},\n  epsilon: {},\n  slack: {},\n  violation_rate: {},\n  decomposition_rate: {},\n  sup_rhs: {}\n}}",
            self.samples.len(),
            self.l1_constant,
            self.l2_constant,
            self.epsilon,
            self.slack,
            self.violation_rate(),
            self.decomposition_rate(),
            self.sup_rhs()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub sample_count: usize,
    /// Multiplier on the right-hand side before flagging a violation.
    pub slack: f64,
    /// Next-state probes per state when estimating `L2`.
    pub probes: usize,
    pub seed: u64,
}

impl Default for BoundCheck {
    fn default() -> Self {
        BoundCheck {
            sample_count: 1_000,
            slack: 1.5,
            probes: 8,
            seed: 0,
        }
    }
}

/// Evaluate every bound term on `check.sample_count` dataset transitions.
///
/// `L2` is estimated per sampled state from next-state probes built out of
/// dataset displacements, so the pair `(s', g(s))` that the bound is
/// applied to is not itself part of the estimate.
pub fn verify_bound(mdp: &SyntheticSmoothMdp, agent: &PorAgent, dataset: &TrajectoryDataset, check: &BoundCheck) -> Result<BoundReport> {
    if dataset.obs_dim() != mdp.state_dim() || dataset.act_dim() != mdp.action_dim() {
        return Err(PorError::DimensionMismatch {
            context: "bound-check dataset",
            expected: mdp.state_dim(),
            got: dataset.obs_dim(),
        });
    }
    if !dataset.has_actions() || dataset.is_empty() {
        return Err(PorError::ActionFree("bound check needs a dataset with actions".into()));
    }
    let trans = dataset.transitions();
    let exec = |s: &[f64], n: &[f64]| -> Result<Vec<f64>> {
        let mut a = agent.execute.mean(s, n)?;
        agent.clip(&mut a);
        Ok(a)
    };
    let mut epsilon: f64 = 0.0;
    for t in trans {
        let a = t.action.as_ref().expect("checked above");
        epsilon = epsilon.max(norm(&sub(&exec(&t.state, &t.next_state)?, a)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let picks: Vec<usize> = if check.sample_count <= trans.len() {
        sample(&mut rng, trans.len(), check.sample_count).into_vec()
    } else {
        (0..check.sample_count).map(|_| rng.gen_range(0..trans.len())).collect()
    };

    let mut l2_constant: f64 = 0.0;
    for &i in &picks {
        let s = &trans[i].state;
        let mut probes = vec![trans[i].next_state.clone()];
        for _ in 0..check.probes {
            let d = &trans[rng.gen_range(0..trans.len())];
            let delta = sub(&d.next_state, &d.state);
            probes.push(s.iter().zip(&delta).map(|(a, b)| a + b).collect());
        }
        let est = estimate_lipschitz(|x| exec(s, x), &probes, usize::MAX, 0)?;
        l2_constant = l2_constant.max(est);
    }
    let l1_constant = mdp.inverse_lipschitz();

    let mut samples = Vec::with_capacity(picks.len());
    for &i in &picks {
        let t = &trans[i];
        let (s, next) = (&t.state, &t.next_state);
        let a = t.action.as_ref().expect("checked above");
        let g = agent.guide.target(s)?;
        let pi_g = exec(s, &g)?;
        let pi_next = exec(s, next)?;
        let a_g = mdp.inverse(s, &g);
        let a_star = mdp.optimal_action(s);
        let pieces = [
            norm(&sub(&pi_g, &pi_next)),
            norm(&sub(&pi_next, a)),
            norm(&sub(a, &a_g)),
            norm(&sub(&a_g, &a_star)),
        ];
        let lhs = norm(&sub(&pi_g, &a_star));
        let l1 = (l1_constant + l2_constant) * norm(&sub(&g, next));
        let l2 = pieces[3];
        let l3 = epsilon;
        let rhs = l1 + l2 + l3;
        samples.push(BoundSample {
            lhs,
            pieces,
            l1,
            l2,
            l3,
            rhs,
            violated: lhs > check.slack * rhs,
        });
    }
    Ok(BoundReport {
        samples,
        l1_constant,
        l2_constant,
        epsilon,
        slack: check.slack,
    })
}

/// Action box used for agents on the synthetic MDP; wide enough that
/// clipping never binds on dataset actions.
pub const SYNTHETIC_ACTION_BOUND: f64 = 10.0;

/// Small networks and short schedules suited to the three-dimensional
/// synthetic MDP.
pub fn synthetic_train_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::table7();
    c.seed = seed;
    c.steps.value_guide = 5_000;
    c.steps.execute = 5_000;
    c.steps.log_every = 500;
    c.steps.eval_every = 0;
    c.value.tau = 0.7;
    c.value.learning_rate = 1e-3;
    c.guide.alpha = 1.0;
    c.guide.learning_rate = 1e-3;
    c.execute.learning_rate = 1e-3;
    c
}

/// Train a POR agent on a synthetic dataset and widen its action box.
pub fn train_synthetic_agent(dataset: &TrajectoryDataset, config: &TrainConfig) -> Result<PorAgent> {
    let out = trainer::train(dataset, config, None)?;
    let d = dataset.act_dim();
    PorAgent::new(
        out.agent.guide,
        out.agent.execute,
        vec![-SYNTHETIC_ACTION_BOUND; d],
        vec![SYNTHETIC_ACTION_BOUND; d],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_recovers_action() {
        let m = SyntheticSmoothMdp::standard();
        let s = [0.3, -0.7, 0.2];
        let a = [0.4, -1.1];
        let back = m.inverse(&s, &m.step(&s, &a));
        assert!(back.iter().zip(&a).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn optimal_action_maximises_reward() {
        let m = SyntheticSmoothMdp::standard();
        let s = [0.5, 0.1, -0.4];
        let best = m.reward(&s, &m.step(&s, &m.optimal_action(&s)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a: Vec<f64> = m.optimal_action(&s).iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect();
            assert!(m.reward(&s, &m.step(&s, &a)) <= best + 1e-12);
        }
    }

    #[test]
    fn inverse_lipschitz_matches_ratio_bound() {
        let m = SyntheticSmoothMdp::standard();
        let l = m.inverse_lipschitz();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = [0.0; 3];
        let mut seen: f64 = 0.0;
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            seen = seen.max(norm(&m.inverse(&s, &x)) / norm(&x));
        }
        assert!(seen <= l + 1e-9);
        assert!(seen > 0.95 * l);
    }

    #[test]
    fn rejects_rank_deficient() {
        assert!(SyntheticSmoothMdp::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]], 0.1).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.37 - 3.0]).collect();
        let two = estimate_lipschitz(|x| Ok(vec![2.0 * x[0]]), &xs, usize::MAX, 0).unwrap();
        assert_eq!(two, 2.0);
        let flat = estimate_lipschitz(|_| Ok(vec![1.0]), &xs, usize::MAX, 0).unwrap();
        assert_eq!(flat, 0.0);
        let dense: Vec<Vec<f64>> = (0..2000).map(|i| vec![i as f64 * 1e-3 - 1.0]).collect();
        let sin = estimate_lipschitz(|x| Ok(vec![x[0].sin()]), &dense, 50_000, 3).unwrap();
        assert!(sin > 0.99 && sin <= 1.0, "{sin}");
        assert!(estimate_lipschitz(|x| Ok(x.to_vec()), &xs[..1], 1, 0).is_err());
    }

    #[test]
    fn coincident_pairs_skipped() {
        let xs = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert_eq!(estimate_lipschitz(|x| Ok(vec![3.0 * x[0]]), &xs, usize::MAX, 0).unwrap(), 3.0);
    }
}
