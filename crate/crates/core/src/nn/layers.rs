use ndarray::{Axis, Zip};
use rand::Rng;

use super::{Matrix, Param, Parameters};

/// Row lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng>(rows: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        Embedding {
            table: Param::uniform(rows, dim, scale, rng),
        }
    }

    pub fn rows(&self) -> usize {
        self.table.value.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.ncols()
    }

    pub fn forward(&self, ids: &[usize]) -> Matrix {
        self.table.value.select(Axis(0), ids)
    }

    /// Scatters row gradients back into the looked-up rows.
    pub fn backward(&mut self, ids: &[usize], grad: &Matrix) {
        for (row, &id) in grad.outer_iter().zip(ids) {
            let mut target = self.table.grad.row_mut(id);
            target += &row;
        }
    }
}

impl Parameters for Embedding {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("table", &self.table);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("table", &mut self.table);
    }
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Param,
    pub bias: Param,
}

impl Affine {
    pub fn new<R: Rng>(input: usize, output: usize, scale: f64, rng: &mut R) -> Self {
        Affine {
            weight: Param::uniform(input, output, scale, rng),
            bias: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, grad_out: &Matrix) -> Matrix {
        self.weight.grad += &x.t().dot(grad_out);
        self.bias.grad += &grad_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        grad_out.dot(&self.weight.value.t())
    }
}

impl Parameters for Affine {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    x.mapv(f64::tanh)
}

/// `grad * (1 - y^2)` for `y = tanh(x)`.
pub fn tanh_backward(y: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    Zip::from(&mut out).and(y).for_each(|g, &y| *g *= 1.0 - y * y);
    out
}
