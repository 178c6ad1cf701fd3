use serde::{Deserialize, Serialize};

use super::{Matrix, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created on the first step,
/// in parameter visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Matrix, Matrix)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, model: &mut P) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let moments = &mut self.moments;
        let mut i = 0;
        model.visit_params_mut(&mut |_, p| {
            if moments.len() <= i {
                moments.push((Matrix::zeros(p.value.raw_dim()), Matrix::zeros(p.value.raw_dim())));
            }
            let (m, v) = &mut moments[i];
            let values = p.value.as_slice_mut().expect("standard layout");
            let grads = p.grad.as_slice().expect("standard layout");
            let ms = m.as_slice_mut().expect("standard layout");
            let vs = v.as_slice_mut().expect("standard layout");
            for j in 0..values.len() {
                let g = grads[j];
                ms[j] = beta1 * ms[j] + (1.0 - beta1) * g;
                vs[j] = beta2 * vs[j] + (1.0 - beta2) * g * g;
                let m_hat = ms[j] / bc1;
                let v_hat = vs[j] / bc2;
                values[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            i += 1;
        });
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: Parameters + ?Sized>(model: &mut P, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit_params(&mut |_, p| sq += p.grad.iter().map(|g| g * g).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        model.visit_params_mut(&mut |_, p| p.grad.mapv_inplace(|g| g * scale));
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: 2,
            min_delta: 1e-4,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("early-stopping patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::InvalidConfig("min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best dev loss: snapshot the model.
    Improved,
    Continue,
    Stop,
}

/// Dev-loss early stopping.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    config: EarlyStopConfig,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(config: EarlyStopConfig) -> Self {
        EarlyStopper {
            config,
            best: f64::INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, dev_loss: f64) -> StopDecision {
        if dev_loss < self.best - self.config.min_delta {
            self.best = dev_loss;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            StopDecision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    struct One(Param);

    impl Parameters for One {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
            f("p", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("p", &mut self.0);
        }
    }

    #[test]
    fn first_adam_step_closed_form() {
        let grads = [0.3, -2.0, 1e-3, 0.0];
        let mut m = One(Param::zeros(1, 4));
        for (j, g) in grads.iter().enumerate() {
            m.0.grad[[0, j]] = *g;
        }
        let lr = 0.01;
        let mut adam = Adam::new(AdamConfig::with_learning_rate(lr));
        adam.step(&mut m);
        for (j, g) in grads.iter().enumerate() {
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((m.0.value[[0, j]] - expected).abs() < 1e-15, "{j}");
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut m = One(Param::zeros(1, 2));
        m.0.grad[[0, 0]] = 3.0;
        m.0.grad[[0, 1]] = 4.0;
        assert_eq!(clip_global_norm(&mut m, 1.0), 5.0);
        assert!((m.0.grad[[0, 0]] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn early_stopping_patience() {
        let mut s = EarlyStopper::new(EarlyStopConfig {
            patience: 2,
            min_delta: 0.01,
        });
        assert_eq!(s.observe(0, 5.0), StopDecision::Improved);
        assert_eq!(s.observe(1, 4.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 3.995), StopDecision::Continue);
        assert_eq!(s.observe(3, 4.5), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(1));
        assert!(EarlyStopConfig {
            patience: 0,
            min_delta: 0.0
        }
        .validate()
        .is_err());
    }
}
