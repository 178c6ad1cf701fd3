use ndarray::Axis;

use super::Matrix;
use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logsumexp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lse = logsumexp(row.iter().copied());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    log_softmax_rows(logits).mapv(f64::exp)
}

/// Mean cross-entropy over rows and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Matrix, targets: &[usize]) -> (f64, Matrix) {
    assert_eq!(logits.nrows(), targets.len());
    let n = targets.len().max(1) as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        loss -= grad[[r, t]].ln();
        grad[[r, t]] -= 1.0;
    }
    grad.mapv_inplace(|g| g / n);
    (loss / n, grad)
}

/// Per-sample NCE objective and score gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NceLoss {
    pub loss: f64,
    pub d_target: f64,
    pub d_noise: Vec<f64>,
}

/// Binary-logistic NCE with the normalizer fixed at 1.
///
/// With `Δ(w) = s(w) - ln(k q(w))`, the loss is
/// `-ln σ(Δ(w)) - Σ_j ln σ(-Δ(w̃_j))` for `k = noise_scores.len()` noise
/// samples. `*_log_q` are natural-log noise probabilities.
pub fn nce_loss(target_score: f64, target_log_q: f64, noise_scores: &[f64], noise_log_q: &[f64]) -> Result<NceLoss> {
    let k = noise_scores.len();
    if k == 0 || noise_log_q.len() != k {
        return Err(Error::InvalidInput(
            "NCE needs k >= 1 noise samples with matching q".into(),
        ));
    }
    if !target_log_q.is_finite() {
        return Err(Error::InvalidInput(
            "noise probability of an observed word is zero".into(),
        ));
    }
    let ln_k = (k as f64).ln();
    let delta = target_score - ln_k - target_log_q;
    let mut loss = -log_sigmoid(delta);
    let d_target = sigmoid(delta) - 1.0;
    let mut d_noise = Vec::with_capacity(k);
    for (&s, &lq) in noise_scores.iter().zip(noise_log_q) {
        let dn = s - ln_k - lq;
        loss -= log_sigmoid(-dn);
        d_noise.push(sigmoid(dn));
    }
    Ok(NceLoss {
        loss,
        d_target,
        d_noise,
    })
}
