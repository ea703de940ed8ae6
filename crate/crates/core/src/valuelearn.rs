//! State-value learning with clipped double V and Polyak-averaged targets.
//!
//! Both online networks regress onto the same target
//! `y = r + gamma * (1 - done) * min(V1'(s'), V2'(s'))`, either with the
//! expectile loss or the sparse (implicitly regularised) loss.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{polyak_update, AdamState, Gradients, Mlp, MlpSpec};
use crate::data::Batch;
use crate::error::{PorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueObjective {
    Expectile,
    Sparse,
}

/// `|tau - 1(u < 0)| * u^2`.
pub fn expectile_residual_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

fn expectile_du(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    2.0 * w * u
}

/// `1(1 + u/2tau > 0) * (1 + u/2tau)^2 + v_s / tau`.
pub fn sparse_value_loss(u: f64, v_s: f64, tau: f64) -> f64 {
    let z = 1.0 + u / (2.0 * tau);
    let quad = if z > 0.0 { z * z } else { 0.0 };
    quad + v_s / tau
}

/// Partial derivatives of [`sparse_value_loss`] in `u` and in `v_s`
/// (holding `u` fixed).
fn sparse_partials(u: f64, tau: f64) -> (f64, f64) {
    let z = 1.0 + u / (2.0 * tau);
    let du = if z > 0.0 { z / tau } else { 0.0 };
    (du, 1.0 / tau)
}

/// Two online value networks, their targets and their optimisers.
#[derive(Debug, Clone)]
pub struct ValueEnsemble {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
    optim: [AdamState; 2],
    pub objective: ValueObjective,
    pub tau: f64,
    pub gamma: f64,
    pub polyak: f64,
}

/// Outcome of [`ValueEnsemble::loss_and_grads`].
#[derive(Debug, Clone)]
pub struct ValueLoss {
    /// Sum of the two networks' batch-mean losses.
    pub loss: f64,
    pub grads: [Gradients; 2],
}

fn column(m: &Array2<f64>) -> Vec<f64> {
    m.column(0).to_vec()
}

impl ValueEnsemble {
    /// Targets start as exact copies of their online networks.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        objective: ValueObjective,
        tau: f64,
        gamma: f64,
        polyak: f64,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        match objective {
            ValueObjective::Expectile if !(tau > 0.0 && tau < 1.0) => {
                return Err(PorError::InvalidArgument(format!("expectile tau {tau} outside (0, 1)")));
            }
            ValueObjective::Sparse if !(tau > 0.0) => {
                return Err(PorError::InvalidArgument(format!("sparse tau {tau} must be positive")));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&polyak) {
            return Err(PorError::InvalidArgument("gamma and polyak rate must lie in [0, 1]".into()));
        }
        let spec = MlpSpec::scalar(obs_dim, hidden).with_layer_norm(layer_norm);
        let v1 = Mlp::new(spec.clone(), rng)?;
        let v2 = Mlp::new(spec, rng)?;
        Ok(ValueEnsemble {
            optim: [AdamState::for_model(&v1, learning_rate), AdamState::for_model(&v2, learning_rate)],
            target: [v1.clone(), v2.clone()],
            online: [v1, v2],
            objective,
            tau,
            gamma,
            polyak,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.online[0].input_dim()
    }

    pub fn optimizers(&self) -> &[AdamState; 2] {
        &self.optim
    }

    /// Change the step size of both optimisers, e.g. to anneal.
    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        for o in &mut self.optim {
            o.learning_rate = learning_rate;
        }
    }

    /// `min(V1(s), V2(s))` over online networks.
    pub fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let a = self.online[0].forward_batch(states)?;
        let b = self.online[1].forward_batch(states)?;
        Ok(a.column(0).iter().zip(b.column(0)).map(|(x, y)| x.min(*y)).collect())
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.online[0].forward(state)?[0].min(self.online[1].forward(state)?[0]))
    }

    /// `min(V1'(s), V2'(s))` over target networks.
    pub fn target_values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let a = self.target[0].forward_batch(states)?;
        let b = self.target[1].forward_batch(states)?;
        Ok(a.column(0).iter().zip(b.column(0)).map(|(x, y)| x.min(*y)).collect())
    }

    /// Bootstrapped targets; the bootstrap term is dropped on terminal steps.
    pub fn td_targets(&self, batch: &Batch) -> Result<Vec<f64>> {
        let next = self.target_values(batch.next_states.view())?;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(next)
            .map(|((r, &d), v)| r + if d { 0.0 } else { self.gamma * v })
            .collect())
    }

    /// `td_target - min(V1(s), V2(s))` for every row.
    pub fn residuals(&self, batch: &Batch) -> Result<Vec<f64>> {
        let y = self.td_targets(batch)?;
        let v = self.values(batch.states.view())?;
        Ok(y.iter().zip(v).map(|(y, v)| y - v).collect())
    }

    /// Batch loss and gradients for both online networks. Targets are held
    /// fixed.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<ValueLoss> {
        if batch.is_empty() {
            return Err(PorError::InvalidArgument("empty value batch".into()));
        }
        let y = self.td_targets(batch)?;
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = [self.online[0].zero_grads(), self.online[1].zero_grads()];
        for k in 0..2 {
            let trace = self.online[k].forward_trace(batch.states.view())?;
            let v = column(&trace.output().to_owned());
            let mut d_out = Array2::zeros((batch.len(), 1));
            for i in 0..batch.len() {
                let u = y[i] - v[i];
                let (l, dv) = match self.objective {
                    ValueObjective::Expectile => (expectile_residual_loss(u, self.tau), -expectile_du(u, self.tau)),
                    ValueObjective::Sparse => {
                        let (du, dvs) = sparse_partials(u, self.tau);
                        (sparse_value_loss(u, v[i], self.tau), dvs - du)
                    }
                };
                loss += l / n;
                d_out[[i, 0]] = dv / n;
            }
            self.online[k].backward(&trace, d_out.view(), &mut grads[k])?;
        }
        Ok(ValueLoss { loss, grads })
    }

    /// One Adam step on both online networks followed by Polyak averaging
    /// of the targets. Nothing changes if the loss or a gradient is not
    /// finite.
    pub fn update(&mut self, batch: &Batch) -> Result<f64> {
        let ValueLoss { loss, grads } = self.loss_and_grads(batch)?;
        if !loss.is_finite() || !grads.iter().all(Gradients::is_finite) {
            return Err(PorError::NonFinite(format!("value loss {loss}")));
        }
        for k in 0..2 {
            self.optim[k].step(&mut self.online[k], &grads[k])?;
        }
        for k in 0..2 {
            polyak_update(&mut self.target[k], &self.online[k], self.polyak)?;
        }
        Ok(loss)
    }

    /// `d min(V1, V2)(s) / ds` for every row, routed through whichever
    /// network attains the minimum.
    pub fn value_input_grad(&self, states: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let t0 = self.online[0].forward_trace(states)?;
        let t1 = self.online[1].forward_trace(states)?;
        let (o0, o1) = (t0.output(), t1.output());
        let n = states.nrows();
        let mut pick0 = Array2::zeros((n, 1));
        let mut pick1 = Array2::zeros((n, 1));
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            if o0[[i, 0]] <= o1[[i, 0]] {
                pick0[[i, 0]] = 1.0;
                v.push(o0[[i, 0]]);
            } else {
                pick1[[i, 0]] = 1.0;
                v.push(o1[[i, 0]]);
            }
        }
        let mut scratch = self.online[0].zero_grads();
        let g0 = self.online[0].backward(&t0, pick0.view(), &mut scratch)?;
        let mut scratch = self.online[1].zero_grads();
        let g1 = self.online[1].backward(&t1, pick1.view(), &mut scratch)?;
        Ok((v, g0 + g1))
    }
}
