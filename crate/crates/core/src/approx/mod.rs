//! Function approximation: MLPs, Adam, target averaging and Gaussian heads.

mod adam;
pub mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::{polyak_update, AdamState};
pub use gaussian::{gaussian_log_prob, LogProbGrad, HALF_LN_2PI};
pub(crate) use gaussian::{log_prob_grad, log_prob_unchecked};
pub use mlp::{Gradients, Head, Mlp, MlpSpec, Trace, LOG_STD_MAX, LOG_STD_MIN};

use ndarray::Array2;

/// Pack a list of equal-length rows into a `(rows, dim)` matrix.
pub fn stack_rows<'a, I>(rows: I, dim: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), dim);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, dim), data).expect("rows have equal length")
}
