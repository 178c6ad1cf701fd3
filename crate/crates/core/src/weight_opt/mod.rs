//! Simulated annealing over the (λ, γ) box and EM estimation of linear
//! mixture weights.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaObjective {
    Wer,
    SlotWer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaConfig {
    pub iterations: usize,
    pub initial_temperature: f64,
    pub cooling: f64,
    pub proposal_std: f64,
    pub lambda_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
    pub objective: SaObjective,
    pub seed: u64,
}

impl Default for SaConfig {
    fn default() -> Self {
        SaConfig {
            iterations: 200,
            initial_temperature: 1.0,
            cooling: 0.95,
            proposal_std: 0.1,
            lambda_bounds: (0.0, 1.0),
            gamma_bounds: (0.01, 2.0),
            objective: SaObjective::Wer,
            seed: 3,
        }
    }
}

impl SaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(Error::InvalidConfig("cooling factor must lie in (0, 1)".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("SA needs at least one iteration".into()));
        }
        if !(self.initial_temperature > 0.0) || !(self.proposal_std > 0.0) {
            return Err(Error::InvalidConfig("temperature and proposal std must be > 0".into()));
        }
        let (l0, l1) = self.lambda_bounds;
        let (g0, g1) = self.gamma_bounds;
        if !(0.0 <= l0 && l0 <= l1 && l1 <= 1.0) || !(0.0 < g0 && g0 <= g1 && g1 <= 2.0) {
            return Err(Error::InvalidConfig("SA box must lie within [0,1] x (0,2]".into()));
        }
        Ok(())
    }

    fn clip(&self, p: SaPoint) -> SaPoint {
        SaPoint {
            lambda: p.lambda.clamp(self.lambda_bounds.0, self.lambda_bounds.1),
            gamma: p.gamma.clamp(self.gamma_bounds.0, self.gamma_bounds.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaPoint {
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub value: f64,
    pub accepted: bool,
    pub temperature: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaResult {
    pub best: SaPoint,
    pub best_value: f64,
    /// The fixed probes `(1,1)`, `(0.5,1)`, `(0,1)` evaluated before the chain.
    pub probes: Vec<(SaPoint, f64)>,
    pub trace: Vec<TraceEntry>,
}

/// Fixed probe points, clipped to the box.
pub const PROBES: [(f64, f64); 3] = [(1.0, 1.0), (0.5, 1.0), (0.0, 1.0)];

/// Minimizes `objective(λ, γ)` by simulated annealing with Gaussian
/// proposals clipped to the box and geometric cooling. The chain starts at
/// the best probe; the best point ever evaluated is returned.
pub fn sa_optimize<F: FnMut(f64, f64) -> f64>(mut objective: F, config: &SaConfig) -> Result<SaResult> {
    config.validate()?;
    let mut eval = |p: SaPoint| {
        let v = objective(p.lambda, p.gamma);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidInput(format!(
                "objective is not finite at ({}, {})",
                p.lambda, p.gamma
            )))
        }
    };
    let mut probes = Vec::new();
    for (l, g) in PROBES {
        let p = config.clip(SaPoint { lambda: l, gamma: g });
        probes.push((p, eval(p)?));
    }
    let (mut current, mut current_value) = probes[0];
    for &(p, v) in &probes[1..] {
        if v < current_value {
            current = p;
            current_value = v;
        }
    }
    let (mut best, mut best_value) = (current, current_value);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.proposal_std).expect("std > 0");
    let mut temperature = config.initial_temperature;
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let proposal = config.clip(SaPoint {
            lambda: current.lambda + normal.sample(&mut rng),
            gamma: current.gamma + normal.sample(&mut rng),
        });
        let value = eval(proposal)?;
        let delta = value - current_value;
        let u: f64 = rng.gen();
        let accepted = delta < 0.0 || u < (-delta / temperature).exp();
        if accepted {
            current = proposal;
            current_value = value;
        }
        if value < best_value {
            best = proposal;
            best_value = value;
        }
        trace.push(TraceEntry {
            iteration,
            lambda: proposal.lambda,
            gamma: proposal.gamma,
            value,
            accepted,
            temperature,
            best_value,
        });
        temperature *= config.cooling;
    }
    Ok(SaResult {
        best,
        best_value,
        probes,
        trace,
    })
}

/// Caches an objective on a grid: points are rounded to multiples of `step`
/// and the objective is evaluated at the rounded point.
pub struct GridMemo<F> {
    objective: F,
    step: f64,
    cache: BTreeMap<(i64, i64), f64>,
    pub evaluations: usize,
}

impl<F: FnMut(f64, f64) -> f64> GridMemo<F> {
    pub fn new(objective: F, step: f64) -> Self {
        GridMemo {
            objective,
            step,
            cache: BTreeMap::new(),
            evaluations: 0,
        }
    }

    pub fn call(&mut self, lambda: f64, gamma: f64) -> f64 {
        let key = ((lambda / self.step).round() as i64, (gamma / self.step).round() as i64);
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        self.evaluations += 1;
        let v = (self.objective)(key.0 as f64 * self.step, key.1 as f64 * self.step);
        self.cache.insert(key, v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 50,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub weights: Vec<f64>,
    /// Mixture log-likelihood at initialization and after every update.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// EM for the weights of a linear mixture of `K` fixed models. `probs[k][t]`
/// is model `k`'s probability of token `t`. Starts from uniform weights.
pub fn em_mixture_weights(probs: &[Vec<f64>], config: &EmConfig) -> Result<EmResult> {
    let k = probs.len();
    if k < 2 {
        return Err(Error::InvalidInput("EM mixture needs at least two models".into()));
    }
    let t = probs[0].len();
    if t == 0 || probs.iter().any(|p| p.len() != t) {
        return Err(Error::InvalidInput(
            "EM mixture needs T >= 1 tokens for every model".into(),
        ));
    }
    if !(config.tolerance > 0.0) {
        return Err(Error::InvalidConfig("EM tolerance must be > 0".into()));
    }
    if probs.iter().flatten().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput(
            "token probabilities must be finite and >= 0".into(),
        ));
    }
    if (0..t).any(|i| probs.iter().all(|p| p[i] == 0.0)) {
        return Err(Error::InvalidInput(
            "a token has zero probability under every model".into(),
        ));
    }
    let log_likelihood = |w: &[f64]| -> f64 {
        (0..t)
            .map(|i| (0..k).map(|j| w[j] * probs[j][i]).sum::<f64>().ln())
            .sum()
    };
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace = vec![log_likelihood(&weights)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let mut next = vec![0.0; k];
        for i in 0..t {
            let mix: f64 = (0..k).map(|j| weights[j] * probs[j][i]).sum();
            for j in 0..k {
                next[j] += weights[j] * probs[j][i] / mix;
            }
        }
        for w in &mut next {
            *w /= t as f64;
        }
        weights = next;
        iterations += 1;
        let ll = log_likelihood(&weights);
        let prev = *trace.last().expect("initial entry");
        trace.push(ll);
        if (ll - prev).abs() < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        weights,
        log_likelihood: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(l: f64, g: f64) -> f64 {
        (l - 0.3).powi(2) + (g - 1.0).powi(2)
    }

    #[test]
    fn sa_recovers_quadratic_minimum() {
        for seed in 0..10 {
            let config = SaConfig {
                seed,
                ..Default::default()
            };
            let r = sa_optimize(quadratic, &config).unwrap();
            assert!((r.best.lambda - 0.3).abs() <= 0.05, "seed {seed}: {:?}", r.best);
            assert!((r.best.gamma - 1.0).abs() <= 0.05, "seed {seed}: {:?}", r.best);
            assert_eq!(r.trace.len(), 200);
            assert!(r.trace.windows(2).all(|w| w[1].best_value <= w[0].best_value));
            for (l, g) in PROBES {
                assert!(r.best_value <= quadratic(l, g));
            }
        }
    }

    #[test]
    fn sa_deterministic_and_shift_invariant() {
        let config = SaConfig::default();
        let a = sa_optimize(quadratic, &config).unwrap();
        let b = sa_optimize(quadratic, &config).unwrap();
        assert_eq!(a, b);
        // Powers of two keep the shifted differences exact.
        let c = sa_optimize(|l, g| quadratic(l, g) + 4.0, &config).unwrap();
        assert_eq!(a.best, c.best);
        let accepted = |r: &SaResult| r.trace.iter().map(|e| e.accepted).collect::<Vec<_>>();
        assert_eq!(accepted(&a), accepted(&c));
    }

    #[test]
    fn sa_rejects_bad_inputs() {
        assert!(sa_optimize(|_, _| f64::NAN, &SaConfig::default()).is_err());
        let bad = SaConfig {
            cooling: 1.0,
            ..Default::default()
        };
        assert!(sa_optimize(quadratic, &bad).is_err());
    }

    #[test]
    fn grid_memo_rounds_and_caches() {
        let mut calls = Vec::new();
        let mut memo = GridMemo::new(
            |l, g| {
                calls.push((l, g));
                l + g
            },
            1e-3,
        );
        assert_eq!(memo.call(0.30004, 1.0), memo.call(0.29996, 1.0));
        memo.call(0.5, 0.5);
        assert_eq!(memo.evaluations, 2);
    }

    #[test]
    fn em_one_step_by_hand() {
        let probs = vec![vec![0.4], vec![0.1]];
        let r = em_mixture_weights(
            &probs,
            &EmConfig {
                max_iterations: 1,
                tolerance: 1e-6,
            },
        )
        .unwrap();
        assert_eq!(r.weights, vec![0.8, 0.2]);
    }

    #[test]
    fn em_symmetric_models_keep_uniform_weights() {
        let p = vec![0.2, 0.5, 0.01];
        let r = em_mixture_weights(&[p.clone(), p.clone(), p], &EmConfig::default()).unwrap();
        for w in &r.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(r.converged);
    }

    #[test]
    fn em_errors() {
        assert!(em_mixture_weights(&[vec![0.1]], &EmConfig::default()).is_err());
        assert!(em_mixture_weights(&[vec![0.0], vec![0.0]], &EmConfig::default()).is_err());
        assert!(em_mixture_weights(&[vec![], vec![]], &EmConfig::default()).is_err());
    }
}
