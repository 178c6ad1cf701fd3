//! LSTM layer over packed variable-length batches.
//!
//! Sequences are sorted by decreasing length so that at step `t` the active
//! sequences form a prefix of `batch_sizes[t]` rows. A sequence that has
//! ended keeps its last state, so the final state of every row is the state
//! after its own last step. Gate blocks inside the `4H` columns are ordered
//! input, forget, output, candidate.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Axis};
use rand::Rng;

use super::loss::sigmoid;
use super::{Matrix, Param, Parameters};
use crate::error::{Error, Result};

/// Row layout of a batch of variable-length sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedBatch {
    /// `order[r]` is the caller's index of the sequence at packed row `r`.
    pub order: Vec<usize>,
    /// Lengths in packed order (non-increasing).
    pub lengths: Vec<usize>,
    /// Number of active rows at each step.
    pub batch_sizes: Vec<usize>,
}

impl PackedBatch {
    pub fn new(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
        let steps = sorted.first().copied().unwrap_or(0);
        let batch_sizes = (0..steps)
            .map(|t| sorted.iter().take_while(|&&l| l > t).count())
            .collect();
        PackedBatch {
            order,
            lengths: sorted,
            batch_sizes,
        }
    }

    pub fn rows(&self) -> usize {
        self.order.len()
    }

    pub fn steps(&self) -> usize {
        self.batch_sizes.len()
    }

    pub fn total(&self) -> usize {
        self.batch_sizes.iter().sum()
    }

    /// Items at step `t` for the active rows, in packed order.
    pub fn gather<T: Copy, S: AsRef<[T]>>(&self, seqs: &[S], t: usize) -> Vec<T> {
        (0..self.batch_sizes[t])
            .map(|r| seqs[self.order[r]].as_ref()[t])
            .collect()
    }

    /// Start offset of each step in the step-major flattened layout.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.batch_sizes
            .iter()
            .map(|&b| {
                let o = acc;
                acc += b;
                o
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(rows: usize, hidden: usize) -> Self {
        LstmState {
            h: Matrix::zeros((rows, hidden)),
            c: Matrix::zeros((rows, hidden)),
        }
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    gates: Matrix,
    tanh_c: Matrix,
}

#[derive(Debug, Clone, Default)]
pub struct LstmCache {
    steps: Vec<StepCache>,
    rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub bias: Param,
}

impl Lstm {
    /// Uniform(-scale, scale) weights, zero biases except the forget gate (1.0).
    pub fn new<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut bias = Param::zeros(1, 4 * hidden);
        bias.value.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Lstm {
            wx: Param::uniform(input, 4 * hidden, scale, rng),
            wh: Param::uniform(hidden, 4 * hidden, scale, rng),
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wx.value.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.wh.value.nrows()
    }

    /// Pre-activations to gate activations, in place.
    fn activate(&self, z: &mut Matrix) {
        let h = self.hidden();
        z.slice_mut(s![.., ..3 * h]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 3 * h..]).mapv_inplace(f64::tanh);
    }

    fn gates(&self, x: &Matrix, h_prev: &Matrix) -> Matrix {
        let mut z = Matrix::zeros((x.nrows(), 4 * self.hidden()));
        z.assign(&self.bias.value.broadcast(z.raw_dim()).expect("bias row"));
        general_mat_mul(1.0, x, &self.wx.value, 1.0, &mut z);
        general_mat_mul(1.0, h_prev, &self.wh.value, 1.0, &mut z);
        self.activate(&mut z);
        z
    }

    /// Returns `(c, tanh(c), h)` from gate activations.
    fn cell(&self, gates: &Matrix, c_prev: &Matrix) -> (Matrix, Matrix, Matrix) {
        let hd = self.hidden();
        let rows = gates.nrows();
        let mut c = Matrix::zeros((rows, hd));
        let mut tc = Matrix::zeros((rows, hd));
        let mut h = Matrix::zeros((rows, hd));
        for r in 0..rows {
            let g = gates.row(r);
            for j in 0..hd {
                let cv = g[hd + j] * c_prev[[r, j]] + g[j] * g[3 * hd + j];
                let t = cv.tanh();
                c[[r, j]] = cv;
                tc[[r, j]] = t;
                h[[r, j]] = g[2 * hd + j] * t;
            }
        }
        (c, tc, h)
    }

    /// One inference step for a batch of rows.
    pub fn step(&self, x: &Matrix, h_prev: &Matrix, c_prev: &Matrix) -> (Matrix, Matrix) {
        let gates = self.gates(x, h_prev);
        let (c, _, h) = self.cell(&gates, c_prev);
        (h, c)
    }

    fn check_inputs(&self, xs: &[Matrix], init: &LstmState) -> Result<()> {
        let hd = self.hidden();
        if init.h.ncols() != hd || init.c.ncols() != hd || init.h.nrows() != init.c.nrows() {
            return Err(Error::Dimension(format!(
                "initial state {:?}/{:?} does not match hidden size {hd}",
                init.h.dim(),
                init.c.dim()
            )));
        }
        let mut prev = init.h.nrows();
        for (t, x) in xs.iter().enumerate() {
            if x.ncols() != self.input_dim() {
                return Err(Error::Dimension(format!(
                    "step {t}: input width {} != {}",
                    x.ncols(),
                    self.input_dim()
                )));
            }
            if x.nrows() > prev {
                return Err(Error::Dimension(format!(
                    "step {t}: batch grew from {prev} to {}",
                    x.nrows()
                )));
            }
            prev = x.nrows();
        }
        Ok(())
    }

    /// Runs the recurrence over packed steps. `xs[t]` holds the inputs of the
    /// `xs[t].nrows()` active rows.
    pub fn forward(&self, xs: &[Matrix], init: &LstmState) -> Result<(Vec<Matrix>, LstmState, LstmCache)> {
        self.check_inputs(xs, init)?;
        let mut state = init.clone();
        let mut hs = Vec::with_capacity(xs.len());
        let mut cache = LstmCache {
            steps: Vec::with_capacity(xs.len()),
            rows: init.h.nrows(),
        };
        for x in xs {
            let b = x.nrows();
            let h_prev = state.h.slice(s![..b, ..]).to_owned();
            let c_prev = state.c.slice(s![..b, ..]).to_owned();
            let gates = self.gates(x, &h_prev);
            let (c, tanh_c, h) = self.cell(&gates, &c_prev);
            state.h.slice_mut(s![..b, ..]).assign(&h);
            state.c.slice_mut(s![..b, ..]).assign(&c);
            hs.push(h);
            cache.steps.push(StepCache {
                x: x.clone(),
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
        }
        Ok((hs, state, cache))
    }

    /// Backpropagates through all steps. `grad_hs[t]` is `dL/dh_t` for the
    /// active rows; `grad_final` is the gradient w.r.t. the returned final
    /// state, if it was used. Returns input gradients per step and the
    /// gradient w.r.t. the initial state.
    pub fn backward(
        &mut self,
        cache: &LstmCache,
        grad_hs: &[Matrix],
        grad_final: Option<&LstmState>,
    ) -> (Vec<Matrix>, LstmState) {
        let hd = self.hidden();
        let mut dh = match grad_final {
            Some(g) => g.h.clone(),
            None => Matrix::zeros((cache.rows, hd)),
        };
        let mut dc = match grad_final {
            Some(g) => g.c.clone(),
            None => Matrix::zeros((cache.rows, hd)),
        };
        let mut dxs = vec![Matrix::zeros((0, 0)); cache.steps.len()];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let b = step.x.nrows();
            let mut dz = Matrix::zeros((b, 4 * hd));
            for r in 0..b {
                let g = step.gates.row(r);
                for j in 0..hd {
                    let (i, f, o, cand) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let tc = step.tanh_c[[r, j]];
                    let dh_rj = dh[[r, j]] + grad_hs[t][[r, j]];
                    let d_o = dh_rj * tc;
                    let dct = dc[[r, j]] + dh_rj * o * (1.0 - tc * tc);
                    let di = dct * cand;
                    let dg = dct * i;
                    let df = dct * step.c_prev[[r, j]];
                    dc[[r, j]] = dct * f;
                    dz[[r, j]] = di * i * (1.0 - i);
                    dz[[r, hd + j]] = df * f * (1.0 - f);
                    dz[[r, 2 * hd + j]] = d_o * o * (1.0 - o);
                    dz[[r, 3 * hd + j]] = dg * (1.0 - cand * cand);
                }
            }
            general_mat_mul(1.0, &step.x.t(), &dz, 1.0, &mut self.wx.grad);
            general_mat_mul(1.0, &step.h_prev.t(), &dz, 1.0, &mut self.wh.grad);
            self.bias.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = dz.dot(&self.wx.value.t());
            let dh_prev = dz.dot(&self.wh.value.t());
            dh.slice_mut(s![..b, ..]).assign(&dh_prev);
        }
        (dxs, LstmState { h: dh, c: dc })
    }
}

impl Parameters for Lstm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("wx", &self.wx);
        f("wh", &self.wh);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("wx", &mut self.wx);
        f("wh", &mut self.wh);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn packing_layout() {
        let p = PackedBatch::new(&[2, 4, 0, 3]);
        assert_eq!(p.order, vec![1, 3, 0, 2]);
        assert_eq!(p.lengths, vec![4, 3, 2, 0]);
        assert_eq!(p.batch_sizes, vec![3, 3, 2, 1]);
        assert_eq!(p.offsets(), vec![0, 3, 6, 8]);
        assert_eq!(p.total(), 9);
        let seqs = vec![vec![10, 11], vec![20, 21, 22, 23], vec![], vec![30, 31, 32]];
        assert_eq!(p.gather(&seqs, 0), vec![20, 30, 10]);
        assert_eq!(p.gather(&seqs, 3), vec![23]);
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lstm = Lstm::new(3, 4, 0.1, &mut rng);
        lstm.wx.value.fill(0.0);
        lstm.wh.value.fill(0.0);
        lstm.bias.value.fill(0.0);
        let xs = vec![Matrix::from_elem((2, 3), 5.0), Matrix::from_elem((1, 3), -2.0)];
        let (hs, fin, _) = lstm.forward(&xs, &LstmState::zeros(2, 4)).unwrap();
        assert!(hs.iter().all(|h| h.iter().all(|&v| v == 0.0)));
        assert!(fin.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_sequence_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lstm = Lstm::new(3, 4, 0.1, &mut rng);
        let init = LstmState {
            h: Matrix::from_elem((1, 4), 0.3),
            c: Matrix::from_elem((1, 4), -0.2),
        };
        let (hs, fin, _) = lstm.forward(&[], &init).unwrap();
        assert!(hs.is_empty());
        assert_eq!(fin, init);
    }

    #[test]
    fn one_dim_step_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lstm = Lstm::new(1, 1, 0.1, &mut rng);
        // gate order i, f, o, g
        let wx = [0.5, -0.3, 0.8, 1.2];
        let wh = [0.1, 0.2, -0.4, 0.7];
        let b = [0.05, 1.0, -0.1, 0.2];
        for k in 0..4 {
            lstm.wx.value[[0, k]] = wx[k];
            lstm.wh.value[[0, k]] = wh[k];
            lstm.bias.value[[0, k]] = b[k];
        }
        let (x, h0, c0) = (0.7, -0.25, 0.4);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let pre = |k: usize| wx[k] * x + wh[k] * h0 + b[k];
        let (i, f, o, g) = (sig(pre(0)), sig(pre(1)), sig(pre(2)), pre(3).tanh());
        let c = f * c0 + i * g;
        let h = o * c.tanh();
        let (h1, c1) = lstm.step(
            &Matrix::from_elem((1, 1), x),
            &Matrix::from_elem((1, 1), h0),
            &Matrix::from_elem((1, 1), c0),
        );
        assert!((h1[[0, 0]] - h).abs() < 1e-15);
        assert!((c1[[0, 0]] - c).abs() < 1e-15);
    }

    #[test]
    fn forget_bias_initialized_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lstm = Lstm::new(2, 3, 0.1, &mut rng);
        let b = &lstm.bias.value;
        for j in 0..12 {
            let expected = if (3..6).contains(&j) { 1.0 } else { 0.0 };
            assert_eq!(b[[0, j]], expected);
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lstm = Lstm::new(2, 3, 0.1, &mut rng);
        let bad = vec![Matrix::zeros((1, 5))];
        assert!(lstm.forward(&bad, &LstmState::zeros(1, 3)).is_err());
        let growing = vec![Matrix::zeros((1, 2)), Matrix::zeros((2, 2))];
        assert!(lstm.forward(&growing, &LstmState::zeros(2, 3)).is_err());
    }
}
