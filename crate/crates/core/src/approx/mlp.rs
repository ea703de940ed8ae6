//! Dense ReLU networks with a hand-written reverse pass.
//!
//! All parameters of a network live in one flat `Vec<f64>`; layer weights
//! and biases are views into it. This keeps the optimizer, target averaging,
//! hashing and finite-difference checks trivial: they all operate on a
//! single slice. [`Gradients`] uses exactly the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PorError, Result};

/// Lower clamp for learned log standard deviations.
pub const LOG_STD_MIN: f64 = -5.0;
/// Upper clamp for learned log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;

const LAYER_NORM_EPS: f64 = 1e-5;
const FINAL_LAYER_INIT: f64 = 1e-3;

/// What the last linear layer represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Single real output.
    Scalar,
    /// Deterministic real vector.
    Vector,
    /// Diagonal Gaussian: the linear output is the mean and a learned,
    /// state-independent log standard deviation is appended to the
    /// parameter vector.
    Gaussian,
}

impl Head {
    pub(crate) fn code(self) -> u8 {
        match self {
            Head::Scalar => 0,
            Head::Vector => 1,
            Head::Gaussian => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Head> {
        match code {
            0 => Some(Head::Scalar),
            1 => Some(Head::Vector),
            2 => Some(Head::Gaussian),
            _ => None,
        }
    }
}

/// Architecture of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub head: Head,
    /// Normalise hidden pre-activations (no affine parameters) before ReLU.
    pub layer_norm: bool,
}

impl MlpSpec {
    pub fn scalar(input_dim: usize, hidden: &[usize]) -> Self {
        Self::new(input_dim, hidden, 1, Head::Scalar)
    }

    pub fn vector(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self::new(input_dim, hidden, output_dim, Head::Vector)
    }

    pub fn gaussian(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self::new(input_dim, hidden, output_dim, Head::Gaussian)
    }

    fn new(input_dim: usize, hidden: &[usize], output_dim: usize, head: Head) -> Self {
        MlpSpec {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            head,
            layer_norm: false,
        }
    }

    pub fn with_layer_norm(mut self, enabled: bool) -> Self {
        self.layer_norm = enabled;
        self
    }

    /// `[input, hidden.., output]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_dim);
        sizes
    }

    /// Closed-form parameter count: `sum(in*out + out)` over layers, plus one
    /// log-std per output for Gaussian heads.
    pub fn param_count(&self) -> usize {
        let sizes = self.layer_sizes();
        let dense: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        match self.head {
            Head::Gaussian => dense + self.output_dim,
            _ => dense,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes().iter().any(|&n| n == 0) {
            return Err(PorError::InvalidArgument(format!(
                "layer sizes must be positive: {:?}",
                self.layer_sizes()
            )));
        }
        if self.head == Head::Scalar && self.output_dim != 1 {
            return Err(PorError::InvalidArgument(
                "scalar head needs output_dim == 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

fn layout(spec: &MlpSpec) -> (Vec<Slot>, Option<usize>) {
    let sizes = spec.layer_sizes();
    let mut off = 0;
    let slots = sizes
        .windows(2)
        .map(|w| {
            let slot = Slot {
                w_off: off,
                b_off: off + w[0] * w[1],
                in_dim: w[0],
                out_dim: w[1],
            };
            off += w[0] * w[1] + w[1];
            slot
        })
        .collect();
    let log_std = (spec.head == Head::Gaussian).then_some(off);
    (slots, log_std)
}

/// Partial derivatives of a scalar loss, laid out like [`Mlp::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Gradients { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Intermediate values of a batched forward pass, consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to every layer (the network input first).
    inputs: Vec<Array2<f64>>,
    /// Post-normalisation, pre-ReLU values of each hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Per-row inverse standard deviation of each hidden layer (layer norm).
    inv_std: Vec<Option<Vec<f64>>>,
    output: Array2<f64>,
}

impl Trace {
    /// Network output (Gaussian mean for Gaussian heads), one row per sample.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Multilayer perceptron with ReLU hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<f64>,
    slots: Vec<Slot>,
    log_std_off: Option<usize>,
}

impl Mlp {
    /// Uniform fan-in (He) initialisation for hidden layers, `±1e-3` for the
    /// output layer, zero biases and zero log-std.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        let mut mlp = Mlp::zeros(spec)?;
        let last = mlp.slots.len() - 1;
        for (i, slot) in mlp.slots.clone().into_iter().enumerate() {
            let bound = if i == last {
                FINAL_LAYER_INIT
            } else {
                (6.0 / slot.in_dim as f64).sqrt()
            };
            for w in &mut mlp.params[slot.w_off..slot.b_off] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let (slots, log_std_off) = layout(&spec);
        let params = vec![0.0; spec.param_count()];
        Ok(Mlp {
            spec,
            params,
            slots,
            log_std_off,
        })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        let mut mlp = Mlp::zeros(spec)?;
        if params.len() != mlp.params.len() {
            return Err(PorError::DimensionMismatch {
                context: "parameter vector",
                expected: mlp.params.len(),
                got: params.len(),
            });
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn num_layers(&self) -> usize {
        self.slots.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients::zeros(self.params.len())
    }

    /// Hex SHA-256 of the architecture and parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in self.spec.layer_sizes() {
            h.update((n as u64).to_le_bytes());
        }
        h.update([self.spec.head.code(), self.spec.layer_norm as u8]);
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = self.slots[layer];
        ArrayView2::from_shape((s.out_dim, s.in_dim), &self.params[s.w_off..s.b_off])
            .expect("layout matches shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let s = self.slots[layer];
        ArrayView1::from(&self.params[s.b_off..s.b_off + s.out_dim])
    }

    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        let s = self.slots[layer];
        ArrayViewMut2::from_shape((s.out_dim, s.in_dim), &mut self.params[s.w_off..s.b_off])
            .expect("layout matches shape")
    }

    pub fn bias_mut(&mut self, layer: usize) -> ArrayViewMut1<'_, f64> {
        let s = self.slots[layer];
        ArrayViewMut1::from(&mut self.params[s.b_off..s.b_off + s.out_dim])
    }

    /// Raw (unclamped) log-std parameters of a Gaussian head.
    pub fn raw_log_std(&self) -> Option<&[f64]> {
        self.log_std_off
            .map(|off| &self.params[off..off + self.spec.output_dim])
    }

    pub fn raw_log_std_mut(&mut self) -> Option<&mut [f64]> {
        let n = self.spec.output_dim;
        self.log_std_off.map(move |off| &mut self.params[off..off + n])
    }

    /// Log-std clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn log_std(&self) -> Option<Vec<f64>> {
        self.raw_log_std()
            .map(|raw| raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect())
    }

    /// Accumulate `d_loss / d_log_std` (w.r.t. the clamped value) into
    /// `grads`. The clamp passes no gradient outside its range.
    pub fn accumulate_log_std_grad(&self, grads: &mut Gradients, d_log_std: &[f64]) -> Result<()> {
        let off = self
            .log_std_off
            .ok_or_else(|| PorError::Contract("log-std gradient on a non-Gaussian head".into()))?;
        check_dim("log-std gradient", self.spec.output_dim, d_log_std.len())?;
        let raw = self.raw_log_std().expect("gaussian head");
        for (i, d) in d_log_std.iter().enumerate() {
            if raw[i] > LOG_STD_MIN && raw[i] < LOG_STD_MAX {
                grads.values[off + i] += d;
            }
        }
        Ok(())
    }

    /// Single-sample forward pass. Returns the mean for Gaussian heads.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.spec.input_dim, x.ncols())?;
        let last = self.slots.len() - 1;
        let mut h = x.to_owned();
        for l in 0..self.slots.len() {
            let mut z = self.affine(l, h.view());
            if l < last {
                if self.spec.layer_norm {
                    normalize_rows(&mut z);
                }
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Result<Trace> {
        check_dim("network input", self.spec.input_dim, x.ncols())?;
        let last = self.slots.len() - 1;
        let mut inputs = Vec::with_capacity(self.slots.len());
        let mut hidden_pre = Vec::with_capacity(last);
        let mut inv_std = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for l in 0..self.slots.len() {
            let mut z = self.affine(l, h.view());
            inputs.push(h);
            if l < last {
                inv_std.push(self.spec.layer_norm.then(|| normalize_rows(&mut z)));
                let act = z.mapv(|v| v.max(0.0));
                hidden_pre.push(z);
                h = act;
            } else {
                h = z;
            }
        }
        Ok(Trace {
            inputs,
            hidden_pre,
            inv_std,
            output: h,
        })
    }

    /// Reverse pass. `d_output` is `d loss / d output` for every row of the
    /// traced batch; parameter gradients are *added* to `grads`. Returns
    /// `d loss / d input`.
    pub fn backward(
        &self,
        trace: &Trace,
        d_output: ArrayView2<'_, f64>,
        grads: &mut Gradients,
    ) -> Result<Array2<f64>> {
        if d_output.dim() != trace.output.dim() {
            return Err(PorError::Contract(format!(
                "output gradient shape {:?} does not match traced output {:?}",
                d_output.dim(),
                trace.output.dim()
            )));
        }
        check_dim("gradient buffer", self.params.len(), grads.len())?;
        let mut delta = d_output.to_owned();
        for l in (0..self.slots.len()).rev() {
            let s = self.slots[l];
            {
                let mut gw = ArrayViewMut2::from_shape(
                    (s.out_dim, s.in_dim),
                    &mut grads.values[s.w_off..s.b_off],
                )
                .expect("layout matches shape");
                general_mat_mul(1.0, &delta.t(), &trace.inputs[l], 1.0, &mut gw);
            }
            {
                let gb = &mut grads.values[s.b_off..s.b_off + s.out_dim];
                for row in delta.rows() {
                    for (g, d) in gb.iter_mut().zip(row.iter()) {
                        *g += d;
                    }
                }
            }
            let mut d_in = delta.dot(&self.weight(l));
            if l == 0 {
                return Ok(d_in);
            }
            let pre = &trace.hidden_pre[l - 1];
            ndarray::Zip::from(&mut d_in)
                .and(pre)
                .for_each(|d, &p| if p <= 0.0 { *d = 0.0 });
            if let Some(inv_std) = &trace.inv_std[l - 1] {
                layer_norm_backward(&mut d_in, pre, inv_std);
            }
            delta = d_in;
        }
        unreachable!("network has at least one layer")
    }

    fn affine(&self, layer: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(layer).t());
        z += &self.bias(layer);
        z
    }

    pub(crate) fn same_architecture(&self, other: &Mlp) -> bool {
        self.spec == other.spec
    }
}

fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(PorError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

/// Normalise each row to zero mean / unit variance in place; returns the
/// per-row inverse standard deviations.
fn normalize_rows(z: &mut Array2<f64>) -> Vec<f64> {
    let n = z.ncols() as f64;
    z.axis_iter_mut(Axis(0))
        .map(|mut row| {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv
        })
        .collect()
}

/// `dz = inv_std * (dn - mean(dn) - n * mean(dn * n))`, row by row.
fn layer_norm_backward(d: &mut Array2<f64>, normed: &Array2<f64>, inv_std: &[f64]) {
    let n = d.ncols() as f64;
    for ((mut drow, nrow), &inv) in d
        .axis_iter_mut(Axis(0))
        .zip(normed.axis_iter(Axis(0)))
        .zip(inv_std)
    {
        let mean_d = drow.sum() / n;
        let mean_dn = drow.iter().zip(nrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        drow.iter_mut()
            .zip(nrow.iter())
            .for_each(|(dv, &nv)| *dv = inv * (*dv - mean_d - nv * mean_dn));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_scalar_model_outputs_zero() {
        let mlp = Mlp::zeros(MlpSpec::scalar(3, &[8, 8])).unwrap();
        assert_eq!(mlp.forward(&[1.0, -2.0, 5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let mlp = Mlp::from_params(MlpSpec::vector(1, &[], 1), vec![2.0, 1.0]).unwrap();
        assert_eq!(mlp.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn seeded_model_is_deterministic() {
        let spec = MlpSpec::gaussian(4, &[16, 16], 2);
        let a = Mlp::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = Mlp::new(spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.param_hash(), b.param_hash());
        let x = [0.3, -1.2, 4.0, 0.0];
        let (ya, yb) = (a.forward(&x).unwrap(), a.forward(&x).unwrap());
        assert_eq!(ya[0].to_bits(), yb[0].to_bits());
        assert_eq!(ya, b.forward(&x).unwrap());
    }

    #[test]
    fn param_count_is_closed_form() {
        let spec = MlpSpec::gaussian(4, &[64, 32], 3);
        let expected = (4 * 64 + 64) + (64 * 32 + 32) + (32 * 3 + 3) + 3;
        assert_eq!(spec.param_count(), expected);
        assert_eq!(Mlp::zeros(spec).unwrap().param_count(), expected);
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let mlp = Mlp::zeros(MlpSpec::scalar(3, &[4])).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0]),
            Err(PorError::DimensionMismatch { expected: 3, got: 1, .. })
        ));
    }

    #[test]
    fn linear_gradient_is_input() {
        let mlp = Mlp::from_params(MlpSpec::vector(1, &[], 1), vec![0.5, 0.0]).unwrap();
        let trace = mlp.forward_trace(array![[3.0]].view()).unwrap();
        let mut g = mlp.zero_grads();
        mlp.backward(&trace, array![[1.0]].view(), &mut g).unwrap();
        assert_eq!(g.as_slice(), &[3.0, 1.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mlp = Mlp::new(MlpSpec::scalar(2, &[4]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let trace = mlp.forward_trace(array![[1.0, 2.0]].view()).unwrap();
        let mut g = mlp.zero_grads();
        mlp.backward(&trace, array![[0.0]].view(), &mut g).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_scalar_output_gradient_is_rejected() {
        let mlp = Mlp::zeros(MlpSpec::scalar(2, &[4])).unwrap();
        let trace = mlp.forward_trace(array![[1.0, 2.0]].view()).unwrap();
        let mut g = mlp.zero_grads();
        let err = mlp.backward(&trace, array![[1.0, 1.0]].view(), &mut g);
        assert!(matches!(err, Err(PorError::Contract(_))));
    }

    #[test]
    fn batch_forward_matches_single() {
        let spec = MlpSpec::vector(3, &[8, 8], 2).with_layer_norm(true);
        let mlp = Mlp::new(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5]];
        let batch = mlp.forward_batch(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let single = mlp.forward(row.as_slice().unwrap()).unwrap();
            assert_eq!(single.as_slice(), batch.row(i).as_slice().unwrap());
        }
    }
}
