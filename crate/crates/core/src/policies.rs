//! Guide-policy, behaviour guide density, execute-policy and their
//! composition into an acting agent.
//!
//! The guide proposes the next state worth reaching; the execute-policy is
//! an inverse dynamics model that finds the action to get there.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::approx::{log_prob_grad, stack_rows, AdamState, Gradients, Mlp, MlpSpec};
use crate::data::{Batch, Columns, TrajectoryDataset};
use crate::error::{PorError, Result};
use crate::valuelearn::ValueEnsemble;

/// Upper bound on the exponential behaviour-cloning weight.
pub const WEIGHT_CLIP: f64 = 100.0;

/// Gaussian over next states given the current state. With `residual`
/// set the network predicts `s' - s` and the mean is `s + net(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateModel {
    pub net: Mlp,
    pub residual: bool,
}

impl StateModel {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], layer_norm: bool, residual: bool, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(MlpSpec::gaussian(obs_dim, hidden, obs_dim).with_layer_norm(layer_norm), rng)?;
        Ok(StateModel { net, residual })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn log_std(&self) -> Vec<f64> {
        self.net.log_std().expect("gaussian head")
    }

    pub fn mean(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.net.forward(s)?;
        if self.residual {
            m.iter_mut().zip(s).for_each(|(m, s)| *m += s);
        }
        Ok(m)
    }

    pub fn mean_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut m = self.net.forward_batch(states)?;
        if self.residual {
            m += &states;
        }
        Ok(m)
    }

    /// Summed log-density of `next` rows under the model at `states` rows.
    pub fn log_prob_batch(&self, states: ArrayView2<'_, f64>, next: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let m = self.mean_batch(states)?;
        let ls = self.log_std();
        Ok(m.rows()
            .into_iter()
            .zip(next.rows())
            .map(|(m, x)| crate::approx::log_prob_unchecked(m.as_slice().unwrap(), &ls, x.as_slice().unwrap()))
            .collect())
    }

    /// `-mean_i w_i log p(next_i | s_i)` and its parameter gradient.
    pub fn weighted_nll(&self, states: ArrayView2<'_, f64>, next: ArrayView2<'_, f64>, weights: &[f64]) -> Result<(f64, Gradients)> {
        let trace = self.net.forward_trace(states)?;
        let mut mean = trace.output().to_owned();
        if self.residual {
            mean += &states;
        }
        let ls = self.log_std();
        let n = states.nrows() as f64;
        let mut loss = 0.0;
        let mut d_mean = Array2::zeros(mean.dim());
        let mut d_ls = vec![0.0; ls.len()];
        for i in 0..states.nrows() {
            let x = next.row(i).to_vec();
            let g = log_prob_grad(mean.row(i).as_slice().unwrap(), &ls, &x);
            let w = weights[i];
            loss -= w * g.value / n;
            for j in 0..ls.len() {
                d_mean[[i, j]] = -w * g.d_mean[j] / n;
                d_ls[j] -= w * g.d_log_std[j] / n;
            }
        }
        let mut grads = self.net.zero_grads();
        self.net.backward(&trace, d_mean.view(), &mut grads)?;
        self.net.accumulate_log_std_grad(&mut grads, &d_ls)?;
        Ok((loss, grads))
    }
}

/// `g_omega`: state to the next state worth reaching.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidePolicy {
    pub model: StateModel,
}

/// `g_mu`: density of dataset next states, fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorGuideDensity {
    pub model: StateModel,
}

impl GuidePolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], layer_norm: bool, residual: bool, rng: &mut R) -> Result<Self> {
        Ok(GuidePolicy {
            model: StateModel::new(obs_dim, hidden, layer_norm, residual, rng)?,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.model.net
    }

    /// Target next state: the mean of the guide distribution.
    pub fn target(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.model.mean(s)
    }
}

/// Maximum-likelihood fit of the behaviour next-state density.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFit {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub residual: bool,
    pub seed: u64,
}

impl Default for DensityFit {
    fn default() -> Self {
        DensityFit {
            hidden: vec![64, 64],
            steps: 5_000,
            batch_size: 256,
            learning_rate: 1e-3,
            residual: true,
            seed: 0,
        }
    }
}

pub fn fit_behavior_density(dataset: &TrajectoryDataset, fit: &DensityFit) -> Result<BehaviorGuideDensity> {
    use rand::SeedableRng;
    if dataset.is_empty() {
        return Err(PorError::InvalidArgument("behaviour density needs at least one transition".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(fit.seed);
    let mut model = StateModel::new(dataset.obs_dim(), &fit.hidden, false, fit.residual, &mut rng)?;
    let cols = Columns::new(dataset);
    let mut opt = AdamState::for_model(&model.net, fit.learning_rate);
    let ones = vec![1.0; fit.batch_size];
    for _ in 0..fit.steps {
        let b = cols.sample(&mut rng, fit.batch_size)?;
        let (_, g) = model.weighted_nll(b.states.view(), b.next_states.view(), &ones)?;
        opt.step(&mut model.net, &g)?;
    }
    Ok(BehaviorGuideDensity { model })
}

/// `pi_theta(a | s, s')`. The network sees `[s, s' - s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutePolicy {
    pub net: Mlp,
}

impl ExecutePolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], layer_norm: bool, rng: &mut R) -> Result<Self> {
        Ok(ExecutePolicy {
            net: Mlp::new(MlpSpec::gaussian(2 * obs_dim, hidden, act_dim).with_layer_norm(layer_norm), rng)?,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim() / 2
    }

    pub fn act_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn encode(states: ArrayView2<'_, f64>, next: ArrayView2<'_, f64>) -> Array2<f64> {
        let delta = &next - &states;
        ndarray::concatenate(Axis(1), &[states.view(), delta.view()]).expect("equal row counts")
    }

    pub fn mean(&self, s: &[f64], next: &[f64]) -> Result<Vec<f64>> {
        if s.len() != next.len() {
            return Err(PorError::DimensionMismatch {
                context: "execute-policy next state",
                expected: s.len(),
                got: next.len(),
            });
        }
        let mut x = s.to_vec();
        x.extend(next.iter().zip(s).map(|(n, s)| n - s));
        self.net.forward(&x)
    }

    pub fn mean_batch(&self, states: ArrayView2<'_, f64>, next: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.net.forward_batch(Self::encode(states, next).view())
    }
}

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// Guide and execute policies composed: `a = mean pi(s, mean g(s))`,
/// clipped to the action box.
#[derive(Debug, Clone, PartialEq)]
pub struct PorAgent {
    pub guide: GuidePolicy,
    pub execute: ExecutePolicy,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl PorAgent {
    pub fn new(guide: GuidePolicy, execute: ExecutePolicy, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        if guide.model.obs_dim() != execute.obs_dim() {
            return Err(PorError::DimensionMismatch {
                context: "guide and execute state dimension",
                expected: execute.obs_dim(),
                got: guide.model.obs_dim(),
            });
        }
        if action_low.len() != execute.act_dim() || action_high.len() != execute.act_dim() {
            return Err(PorError::DimensionMismatch {
                context: "action bounds",
                expected: execute.act_dim(),
                got: action_low.len(),
            });
        }
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l <= h)) {
            return Err(PorError::InvalidArgument("action box has low > high".into()));
        }
        Ok(PorAgent {
            guide,
            execute,
            action_low,
            action_high,
        })
    }

    pub fn clip(&self, a: &mut [f64]) {
        for (i, v) in a.iter_mut().enumerate() {
            *v = if v.is_nan() { 0.0f64.clamp(self.action_low[i], self.action_high[i]) } else { v.clamp(self.action_low[i], self.action_high[i]) };
        }
    }

    pub fn act_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let g = self.guide.model.mean_batch(states)?;
        let mut a = self.execute.mean_batch(states, g.view())?;
        for mut row in a.rows_mut() {
            self.clip(row.as_slice_mut().unwrap());
        }
        Ok(a)
    }
}

impl Policy for PorAgent {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        let g = self.guide.target(s)?;
        let mut a = self.execute.mean(s, &g)?;
        self.clip(&mut a);
        Ok(a)
    }
}

/// `min(exp(u / alpha), WEIGHT_CLIP)` for residuals `u`.
pub fn exp_weights(residuals: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(PorError::InvalidArgument(format!("alpha {alpha} must be positive")));
    }
    Ok(residuals.iter().map(|u| (u / alpha).exp().min(WEIGHT_CLIP)).collect())
}

/// Residual-weighted regression of the guide onto dataset next states.
/// Weights come from the value ensemble and carry no gradient.
pub fn guide_loss_weighted(batch: &Batch, guide: &GuidePolicy, value: &ValueEnsemble, alpha: f64) -> Result<(f64, Gradients)> {
    let w = exp_weights(&value.residuals(batch)?, alpha)?;
    guide
        .model
        .weighted_nll(batch.states.view(), batch.next_states.view(), &w)
}

/// Value ascent on reparameterised guide samples `mean + std * noise`,
/// anchored to the behaviour density:
/// `-mean[V(s') + alpha * log g_mu(s' | s)]`. `noise` has one row per
/// batch element; pass zeros for the deterministic variant.
pub fn guide_loss_explicit(
    batch: &Batch,
    guide: &GuidePolicy,
    value: &ValueEnsemble,
    behavior: &BehaviorGuideDensity,
    alpha: f64,
    noise: ArrayView2<'_, f64>,
) -> Result<(f64, Gradients)> {
    if !(alpha >= 0.0) {
        return Err(PorError::InvalidArgument(format!("alpha {alpha} must be non-negative")));
    }
    let states = batch.states.view();
    if noise.dim() != states.dim() {
        return Err(PorError::DimensionMismatch {
            context: "guide noise rows",
            expected: states.nrows(),
            got: noise.nrows(),
        });
    }
    let model = &guide.model;
    let trace = model.net.forward_trace(states)?;
    let mut mean = trace.output().to_owned();
    if model.residual {
        mean += &states;
    }
    let ls = model.log_std();
    let std: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
    let mut sample = mean.clone();
    ndarray::Zip::from(sample.rows_mut()).and(noise.rows()).for_each(|mut r, e| {
        for j in 0..r.len() {
            r[j] += std[j] * e[j];
        }
    });
    let (v, dv) = value.value_input_grad(sample.view())?;
    let b_ls = behavior.model.log_std();
    let b_mean = behavior.model.mean_batch(states)?;
    let n = states.nrows() as f64;
    let d = ls.len();
    let mut loss = 0.0;
    let mut d_sample = Array2::zeros(sample.dim());
    for i in 0..states.nrows() {
        let x = sample.row(i).to_vec();
        let lp = log_prob_grad(b_mean.row(i).as_slice().unwrap(), &b_ls, &x);
        loss -= (v[i] + alpha * lp.value) / n;
        for j in 0..d {
            d_sample[[i, j]] = -(dv[[i, j]] + alpha * lp.d_x[j]) / n;
        }
    }
    // sample = mean + std * noise: d/dmean passes straight through,
    // d/dlog_std picks up std * noise.
    let mut d_ls = vec![0.0; d];
    for i in 0..states.nrows() {
        for j in 0..d {
            d_ls[j] += d_sample[[i, j]] * std[j] * noise[[i, j]];
        }
    }
    let mut grads = model.net.zero_grads();
    model.net.backward(&trace, d_sample.view(), &mut grads)?;
    model.net.accumulate_log_std_grad(&mut grads, &d_ls)?;
    Ok((loss, grads))
}

/// Standard normal noise for [`guide_loss_explicit`].
pub fn guide_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, obs_dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, obs_dim), |_| rng.sample(StandardNormal))
}

/// `-mean_i w_i log pi(a_i | s_i, s'_i)`; weights default to one.
pub fn execute_loss(batch: &Batch, policy: &ExecutePolicy, weights: Option<&[f64]>) -> Result<(f64, Gradients)> {
    let actions = batch.require_actions("execute-policy training")?;
    if let Some(w) = weights {
        if w.len() != batch.len() {
            return Err(PorError::DimensionMismatch {
                context: "execute weights",
                expected: batch.len(),
                got: w.len(),
            });
        }
    }
    let x = ExecutePolicy::encode(batch.states.view(), batch.next_states.view());
    let trace = policy.net.forward_trace(x.view())?;
    let mean = trace.output();
    let ls = policy.net.log_std().expect("gaussian head");
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_mean = Array2::zeros(mean.dim());
    let mut d_ls = vec![0.0; ls.len()];
    for i in 0..batch.len() {
        let w = weights.map_or(1.0, |w| w[i]);
        let a = actions.row(i).to_vec();
        let g = log_prob_grad(mean.row(i).to_vec().as_slice(), &ls, &a);
        loss -= w * g.value / n;
        for j in 0..ls.len() {
            d_mean[[i, j]] = -w * g.d_mean[j] / n;
            d_ls[j] -= w * g.d_log_std[j] / n;
        }
    }
    let mut grads = policy.net.zero_grads();
    policy.net.backward(&trace, d_mean.view(), &mut grads)?;
    policy.net.accumulate_log_std_grad(&mut grads, &d_ls)?;
    Ok((loss, grads))
}

/// Pack single states into a matrix; convenience for callers acting on
/// many states at once.
pub fn states_matrix(states: &[Vec<f64>], obs_dim: usize) -> Array2<f64> {
    stack_rows(states.iter().map(Vec::as_slice), obs_dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn weights_examples() {
        let w = exp_weights(&[0.0, 10.0 * 2f64.ln(), 1e3], 10.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 2.0).abs() < 1e-12);
        assert_eq!(w[2], WEIGHT_CLIP);
        assert!(exp_weights(&[0.0], 0.0).is_err());
    }

    #[test]
    fn act_is_clipped_and_deterministic() {
        let mut r = rng();
        let guide = GuidePolicy::new(2, &[8], false, true, &mut r).unwrap();
        let mut execute = ExecutePolicy::new(2, 2, &[8], false, &mut r).unwrap();
        let last = execute.net.num_layers() - 1;
        execute.net.bias_mut(last).fill(5.0);
        let agent = PorAgent::new(guide, execute, vec![-0.1, -0.1], vec![0.1, 0.1]).unwrap();
        let a = agent.act(&[0.3, 0.4]).unwrap();
        assert_eq!(a, vec![0.1, 0.1]);
        assert_eq!(a, agent.act(&[0.3, 0.4]).unwrap());
        let batch = agent.act_batch(states_matrix(&[vec![0.3, 0.4]], 2).view()).unwrap();
        assert_eq!(batch.row(0).to_vec(), a);
    }

    #[test]
    fn execute_rejects_action_free() {
        let mut r = rng();
        let p = ExecutePolicy::new(1, 1, &[4], false, &mut r).unwrap();
        let b = Batch {
            states: Array2::zeros((1, 1)),
            actions: None,
            rewards: vec![0.0],
            next_states: Array2::zeros((1, 1)),
            dones: vec![false],
        };
        assert!(matches!(execute_loss(&b, &p, None), Err(PorError::ActionFree(_))));
    }

    #[test]
    fn residual_guide_mean() {
        let mut r = rng();
        let mut g = GuidePolicy::new(2, &[4], false, true, &mut r).unwrap();
        g.model.net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(g.target(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }
}
