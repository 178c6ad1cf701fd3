//! Small deterministic numeric core: dense layers, a packed-batch LSTM with
//! exact backpropagation through time, softmax cross-entropy and NCE losses,
//! Adam, early stopping, finite-difference gradient checks and a tensor file
//! format.
//!
//! Everything is `f64`. Matrices are row-major [`ndarray::Array2`].

mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod optim;
mod tensor_io;

use ndarray::Array2;
use rand::Rng;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{tanh_backward, tanh_forward, Affine, Embedding};
pub use loss::{log_softmax_rows, logsumexp, nce_loss, sigmoid, softmax_cross_entropy, softmax_rows, NceLoss};
pub use lstm::{Lstm, LstmCache, LstmState, PackedBatch};
pub use optim::{clip_global_norm, Adam, AdamConfig, EarlyStopConfig, EarlyStopper, StopDecision};
pub use tensor_io::{read_tensor_file, write_tensor_file, TensorFile};

pub type Matrix = Array2<f64>;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Matrix::zeros((rows, cols)))
    }

    /// Uniform(-scale, scale) initialization.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Param::new(Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Named access to every trainable tensor, in a fixed order.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }

    /// Named copies of all values, in visit order.
    fn named_values(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    /// Overwrites values from named tensors; names and shapes must match.
    fn load_values(&mut self, tensors: &[(String, Matrix)]) -> crate::Result<()> {
        let mut err = None;
        let mut i = 0;
        self.visit_params_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match tensors.get(i) {
                Some((n, m)) if n == name && m.dim() == p.value.dim() => p.value.assign(m),
                Some((n, m)) => {
                    err = Some(format!(
                        "tensor {i}: expected {name} {:?}, found {n} {:?}",
                        p.value.dim(),
                        m.dim()
                    ))
                }
                None => err = Some(format!("missing tensor {name}")),
            }
            i += 1;
        });
        if err.is_none() && i != tensors.len() {
            err = Some(format!("{} extra tensors", tensors.len() - i));
        }
        match err {
            Some(e) => Err(crate::Error::Dimension(e)),
            None => Ok(()),
        }
    }
}

/// Visits a nested module's parameters under a `prefix.` namespace.
pub fn visit_nested(prefix: &str, module: &dyn Parameters, f: &mut dyn FnMut(&str, &Param)) {
    module.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub fn visit_nested_mut(prefix: &str, module: &mut dyn Parameters, f: &mut dyn FnMut(&str, &mut Param)) {
    module.visit_params_mut(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}
