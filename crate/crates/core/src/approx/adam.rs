use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};
use crate::error::{PorError, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn for_model(model: &Mlp, learning_rate: f64) -> Self {
        Self::new(model.param_count(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Apply one update. Non-finite gradients are refused and leave both the
    /// model and the optimizer state untouched.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        self.step_slice(model.params_mut(), grads.as_slice())
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(PorError::DimensionMismatch {
                context: "adam step",
                expected: n,
                got: if params.len() != n { params.len() } else { grads.len() },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(PorError::NonFinite(format!(
                "gradient component {i} = {} at adam step {}",
                grads[i],
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}

/// `target <- lambda * online + (1 - lambda) * target`, elementwise.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, lambda: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(PorError::ArchitectureMismatch(format!(
            "target {:?} vs online {:?}",
            target.spec().layer_sizes(),
            online.spec().layer_sizes()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(PorError::InvalidArgument(format!(
            "polyak lambda {lambda} outside [0, 1]"
        )));
    }
    if lambda == 1.0 {
        target.params_mut().copy_from_slice(online.params());
        return Ok(());
    }
    if lambda == 0.0 {
        return Ok(());
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = lambda * o + (1.0 - lambda) * *t;
    }
    Ok(())
}
