//! Diagonal Gaussian log-density and its partial derivatives.

use crate::error::{PorError, Result};

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `sum_i log N(x_i; mean_i, exp(log_std_i)^2)`.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> Result<f64> {
    if mean.len() != x.len() || log_std.len() != x.len() {
        return Err(PorError::DimensionMismatch {
            context: "gaussian log-prob",
            expected: x.len(),
            got: if mean.len() != x.len() { mean.len() } else { log_std.len() },
        });
    }
    Ok(log_prob_unchecked(mean, log_std, x))
}

pub(crate) fn log_prob_unchecked(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, ls), xi)| {
            let z = (xi - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Partial derivatives of [`gaussian_log_prob`] for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbGrad {
    pub value: f64,
    pub d_mean: Vec<f64>,
    pub d_log_std: Vec<f64>,
    /// Derivative w.r.t. the evaluated point (`-d_mean`).
    pub d_x: Vec<f64>,
}

pub(crate) fn log_prob_grad(mean: &[f64], log_std: &[f64], x: &[f64]) -> LogProbGrad {
    let n = mean.len();
    let mut out = LogProbGrad {
        value: 0.0,
        d_mean: Vec::with_capacity(n),
        d_log_std: Vec::with_capacity(n),
        d_x: Vec::with_capacity(n),
    };
    for i in 0..n {
        let inv_var = (-2.0 * log_std[i]).exp();
        let diff = x[i] - mean[i];
        let z2 = diff * diff * inv_var;
        out.value += -0.5 * z2 - log_std[i] - HALF_LN_2PI;
        out.d_mean.push(diff * inv_var);
        out.d_x.push(-diff * inv_var);
        out.d_log_std.push(z2 - 1.0);
    }
    out
}
