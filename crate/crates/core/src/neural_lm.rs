//! Two-layer LSTM language model trained with full softmax or
//! noise-contrastive estimation, and domain fine-tuning.
//!
//! Input ids are vocabulary ids plus `bos = V`; output ids are vocabulary ids
//! plus `eos = V`. The output projection is stored `(V + 1) x H` (one row per
//! predicted word) so NCE can gather the few rows it needs.

use std::sync::Arc;

use ndarray::{concatenate, s, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::SentenceScorer;
use crate::nn::{
    clip_global_norm, logsumexp, nce_loss, read_tensor_file, softmax_cross_entropy, visit_nested, visit_nested_mut,
    write_tensor_file, Adam, AdamConfig, EarlyStopConfig, EarlyStopper, Embedding, Lstm, LstmState, Matrix,
    PackedBatch, Param, Parameters, StopDecision, TensorFile,
};

/// Initial output bias of words never seen in training.
const MIN_LOG_BIAS: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmLoss {
    Softmax,
    Nce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlmTrainConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LmLoss,
    pub noise_samples: usize,
    pub early_stop: EarlyStopConfig,
    /// Learning-rate factor applied, after reverting to the best snapshot,
    /// whenever an epoch fails to improve dev perplexity. 1 disables it.
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for NlmTrainConfig {
    fn default() -> Self {
        NlmTrainConfig {
            embedding_dim: 64,
            hidden: 128,
            learning_rate: 0.002,
            epochs: 40,
            batch_size: 32,
            loss: LmLoss::Nce,
            noise_samples: 20,
            early_stop: EarlyStopConfig {
                patience: 4,
                min_delta: 1e-3,
            },
            lr_decay: 0.5,
            clip_norm: 5.0,
            init_scale: 0.1,
            seed: 1,
        }
    }
}

impl NlmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.loss == LmLoss::Nce && self.noise_samples == 0 {
            return Err(Error::InvalidConfig("NCE needs at least one noise sample".into()));
        }
        if self.batch_size == 0 || self.embedding_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch size and layer sizes must be >= 1".into()));
        }
        validate_decay(self.lr_decay)?;
        self.early_stop.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Fraction of the parent's initial learning rate.
    pub lr_factor: f64,
    pub epochs: usize,
    pub early_stop: EarlyStopConfig,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr_factor: 0.25,
            epochs: 10,
            early_stop: EarlyStopConfig {
                patience: 3,
                min_delta: 1e-3,
            },
            lr_decay: 0.5,
            seed: 2,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::InvalidConfig("fine-tune lr factor must lie in (0, 1]".into()));
        }
        validate_decay(self.lr_decay)?;
        self.early_stop.validate()
    }
}

fn validate_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig("lr decay must lie in (0, 1]".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_ppl: f64,
    pub improved: bool,
    /// Learning rate used during the epoch.
    #[serde(default)]
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub initial_dev_ppl: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_dev_ppl: f64,
    pub learning_rate: f64,
}

impl TrainingHistory {
    /// Dev PPL of the epochs that set a new best, in order.
    pub fn retained_dev_ppl(&self) -> Vec<f64> {
        self.epochs.iter().filter(|e| e.improved).map(|e| e.dev_ppl).collect()
    }
}

/// Unigram noise distribution over output ids.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    log_q: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl NoiseDistribution {
    /// Counts target occurrences (including end-of-sentence) in `sentences`.
    pub fn unigram<S: AsRef<[usize]>>(sentences: &[S], output_size: usize) -> Result<Self> {
        let mut counts = vec![0.0f64; output_size];
        for s in sentences {
            for &id in s.as_ref() {
                counts[id] += 1.0;
            }
            counts[output_size - 1] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let sampler = WeightedIndex::new(&counts).map_err(|e| Error::NoData(format!("noise distribution: {e}")))?;
        let log_q = counts.iter().map(|c| (c / total).ln()).collect();
        Ok(NoiseDistribution { log_q, sampler })
    }

    pub fn log_q(&self, id: usize) -> f64 {
        self.log_q[id]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// Batched recurrent state of the two LSTM layers, one row per hypothesis
/// prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct LmStates {
    pub layer1: LstmState,
    pub layer2: LstmState,
}

impl LmStates {
    pub fn rows(&self) -> usize {
        self.layer1.h.nrows()
    }

    /// Copies the given rows into a new state batch.
    pub fn select(&self, rows: &[usize]) -> LmStates {
        let pick = |m: &Matrix| m.select(Axis(0), rows);
        LmStates {
            layer1: LstmState {
                h: pick(&self.layer1.h),
                c: pick(&self.layer1.c),
            },
            layer2: LstmState {
                h: pick(&self.layer2.h),
                c: pick(&self.layer2.c),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeuralLm {
    vocab: Arc<Vocabulary>,
    embedding: Embedding,
    lstm1: Lstm,
    lstm2: Lstm,
    out_weight: Param,
    out_bias: Param,
    nce: bool,
    base_learning_rate: f64,
}

impl Parameters for NeuralLm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_nested("embedding", &self.embedding, f);
        visit_nested("lstm1", &self.lstm1, f);
        visit_nested("lstm2", &self.lstm2, f);
        f("output.weight", &self.out_weight);
        f("output.bias", &self.out_bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_nested_mut("embedding", &mut self.embedding, f);
        visit_nested_mut("lstm1", &mut self.lstm1, f);
        visit_nested_mut("lstm2", &mut self.lstm2, f);
        f("output.weight", &mut self.out_weight);
        f("output.bias", &mut self.out_bias);
    }
}

/// Training objective for one batch.
pub enum Objective<'a, R: Rng> {
    Softmax,
    Nce {
        noise: &'a NoiseDistribution,
        samples: usize,
        rng: &'a mut R,
    },
}

impl NeuralLm {
    /// Random initialization: uniform(-scale, scale) weights, zero biases
    /// (forget gates at 1.0).
    pub fn new(vocab: Arc<Vocabulary>, embedding_dim: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        NeuralLm {
            embedding: Embedding::new(v + 1, embedding_dim, scale, &mut rng),
            lstm1: Lstm::new(embedding_dim, hidden, scale, &mut rng),
            lstm2: Lstm::new(hidden, hidden, scale, &mut rng),
            out_weight: Param::uniform(v + 1, hidden, scale, &mut rng),
            out_bias: Param::zeros(1, v + 1),
            vocab,
            nce: false,
            base_learning_rate: 0.0,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn bos(&self) -> usize {
        self.vocab.len()
    }

    pub fn eos(&self) -> usize {
        self.vocab.len()
    }

    pub fn output_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn hidden(&self) -> usize {
        self.lstm1.hidden()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.dim()
    }

    pub fn trained_with_nce(&self) -> bool {
        self.nce
    }

    pub fn base_learning_rate(&self) -> f64 {
        self.base_learning_rate
    }

    /// Runs both LSTM layers over a batch. Returns the packing, the stacked
    /// top-layer outputs (step-major) and the caches for backprop.
    fn forward(
        &self,
        inputs: &[Vec<usize>],
    ) -> (
        PackedBatch,
        Matrix,
        crate::nn::LstmCache,
        crate::nn::LstmCache,
        Vec<Vec<usize>>,
    ) {
        let lengths: Vec<usize> = inputs.iter().map(Vec::len).collect();
        let packed = PackedBatch::new(&lengths);
        let ids: Vec<Vec<usize>> = (0..packed.steps()).map(|t| packed.gather(inputs, t)).collect();
        let xs: Vec<Matrix> = ids.iter().map(|step| self.embedding.forward(step)).collect();
        let h = self.hidden();
        let rows = packed.rows();
        let (hs1, _, cache1) = self
            .lstm1
            .forward(&xs, &LstmState::zeros(rows, h))
            .expect("embedding width matches layer 1");
        let (hs2, _, cache2) = self
            .lstm2
            .forward(&hs1, &LstmState::zeros(rows, h))
            .expect("layer widths match");
        let views: Vec<_> = hs2.iter().map(|m| m.view()).collect();
        let stacked = if views.is_empty() {
            Matrix::zeros((0, h))
        } else {
            concatenate(Axis(0), &views).expect("equal widths")
        };
        (packed, stacked, cache1, cache2, ids)
    }

    fn io_pairs(&self, sentences: &[&[usize]]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let inputs = sentences
            .iter()
            .map(|s| std::iter::once(self.bos()).chain(s.iter().copied()).collect())
            .collect();
        let targets = sentences
            .iter()
            .map(|s| s.iter().copied().chain(std::iter::once(self.eos())).collect())
            .collect();
        (inputs, targets)
    }

    fn logit(&self, h: ndarray::ArrayView1<f64>, word: usize) -> f64 {
        self.out_weight.value.row(word).dot(&h) + self.out_bias.value[[0, word]]
    }

    /// Computes the batch loss (mean per predicted token) and accumulates
    /// gradients into all parameters.
    pub fn batch_loss<R: Rng>(&mut self, sentences: &[&[usize]], objective: Objective<'_, R>) -> Result<f64> {
        let (inputs, targets) = self.io_pairs(sentences);
        let (packed, stacked, cache1, cache2, ids) = self.forward(&inputs);
        let flat_targets: Vec<usize> = (0..packed.steps()).flat_map(|t| packed.gather(&targets, t)).collect();
        let n = flat_targets.len().max(1) as f64;
        let h = self.hidden();

        let (loss, d_stacked) = match objective {
            Objective::Softmax => {
                let logits = stacked.dot(&self.out_weight.value.t()) + &self.out_bias.value;
                let (loss, d_logits) = softmax_cross_entropy(&logits, &flat_targets);
                self.out_weight.grad += &d_logits.t().dot(&stacked);
                self.out_bias.grad += &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
                (loss, d_logits.dot(&self.out_weight.value))
            }
            Objective::Nce { noise, samples, rng } => {
                let mut d_stacked = Matrix::zeros((stacked.nrows(), h));
                let mut total = 0.0;
                let mut noise_ids = vec![0usize; samples];
                let mut noise_scores = vec![0.0; samples];
                let mut noise_lq = vec![0.0; samples];
                for (r, &target) in flat_targets.iter().enumerate() {
                    let hr = stacked.row(r);
                    for j in 0..samples {
                        noise_ids[j] = noise.sample(rng);
                        noise_scores[j] = self.logit(hr, noise_ids[j]);
                        noise_lq[j] = noise.log_q(noise_ids[j]);
                    }
                    let out = nce_loss(self.logit(hr, target), noise.log_q(target), &noise_scores, &noise_lq)?;
                    total += out.loss;
                    let pairs = std::iter::once((target, out.d_target))
                        .chain(noise_ids.iter().copied().zip(out.d_noise.iter().copied()));
                    for (word, d) in pairs {
                        let d = d / n;
                        let w_row = self.out_weight.value.row(word).to_owned();
                        d_stacked.row_mut(r).scaled_add(d, &w_row);
                        self.out_weight.grad.row_mut(word).scaled_add(d, &hr);
                        self.out_bias.grad[[0, word]] += d;
                    }
                }
                (total / n, d_stacked)
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite batch loss {loss}")));
        }

        let offsets = packed.offsets();
        let d_hs2: Vec<Matrix> = packed
            .batch_sizes
            .iter()
            .zip(&offsets)
            .map(|(&b, &o)| d_stacked.slice(s![o..o + b, ..]).to_owned())
            .collect();
        let (d_hs1, _) = self.lstm2.backward(&cache2, &d_hs2, None);
        let (d_xs, _) = self.lstm1.backward(&cache1, &d_hs1, None);
        for (step_ids, dx) in ids.iter().zip(&d_xs) {
            self.embedding.backward(step_ids, dx);
        }
        Ok(loss)
    }

    /// Per-token natural-log scores for each sentence (`len + 1` values,
    /// last is end-of-sentence). Softmax models are normalized; NCE models
    /// return the raw self-normalized logits.
    pub fn score_batch(&self, sentences: &[&[usize]]) -> Vec<Vec<f64>> {
        let (inputs, targets) = self.io_pairs(sentences);
        let (packed, stacked, _, _, _) = self.forward(&inputs);
        let mut out: Vec<Vec<f64>> = sentences.iter().map(|s| Vec::with_capacity(s.len() + 1)).collect();
        let logits = if self.nce {
            None
        } else {
            Some(stacked.dot(&self.out_weight.value.t()) + &self.out_bias.value)
        };
        let mut row = 0;
        for (t, &b) in packed.batch_sizes.iter().enumerate() {
            for r in 0..b {
                let seq = packed.order[r];
                let target = targets[seq][t];
                let score = match &logits {
                    Some(l) => l[[row, target]] - logsumexp(l.row(row).iter().copied()),
                    None => self.logit(stacked.row(row), target),
                };
                out[seq].push(score);
                row += 1;
            }
        }
        out
    }

    pub fn score_sequence(&self, ids: &[usize]) -> Vec<f64> {
        self.score_batch(&[ids]).pop().expect("one sentence")
    }

    /// Full output distribution (log-softmax of the logits) after `prefix`.
    pub fn next_log_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        let states = self.advance_path(prefix);
        let logits = self.logits(&states.layer2.h);
        let row = logits.row(0);
        let lse = logsumexp(row.iter().copied());
        row.iter().map(|v| v - lse).collect()
    }

    /// `log Σ_w exp(logit)` after `prefix`; zero for a perfectly
    /// self-normalized model.
    pub fn log_partition(&self, prefix: &[usize]) -> f64 {
        let states = self.advance_path(prefix);
        let logits = self.logits(&states.layer2.h);
        logsumexp(logits.row(0).iter().copied())
    }

    fn advance_path(&self, prefix: &[usize]) -> LmStates {
        let mut states = self.initial_states(1);
        for &id in prefix {
            states = self.advance(&states, &[id]);
        }
        states
    }

    pub fn logits(&self, top_hidden: &Matrix) -> Matrix {
        top_hidden.dot(&self.out_weight.value.t()) + &self.out_bias.value
    }

    /// `n` copies of the state after consuming the begin-of-sentence token.
    pub fn initial_states(&self, n: usize) -> LmStates {
        let h = self.hidden();
        let zero = LstmState::zeros(1, h);
        let one = self.step(
            &LmStates {
                layer1: zero.clone(),
                layer2: zero,
            },
            &[self.bos()],
        );
        one.select(&vec![0; n])
    }

    fn step(&self, states: &LmStates, tokens: &[usize]) -> LmStates {
        let x = self.embedding.forward(tokens);
        let (h1, c1) = self.lstm1.step(&x, &states.layer1.h, &states.layer1.c);
        let (h2, c2) = self.lstm2.step(&h1, &states.layer2.h, &states.layer2.c);
        LmStates {
            layer1: LstmState { h: h1, c: c1 },
            layer2: LstmState { h: h2, c: c2 },
        }
    }

    /// Consumes one token per row.
    pub fn advance(&self, states: &LmStates, tokens: &[usize]) -> LmStates {
        assert_eq!(states.rows(), tokens.len());
        self.step(states, tokens)
    }

    /// Log-normalizer per row: `logsumexp(logits)` for softmax models, zero
    /// for NCE models.
    pub fn log_normalizers(&self, states: &LmStates) -> Vec<f64> {
        if self.nce {
            return vec![0.0; states.rows()];
        }
        let logits = self.logits(&states.layer2.h);
        logits
            .rows()
            .into_iter()
            .map(|r| logsumexp(r.iter().copied()))
            .collect()
    }

    /// Score of `word` at `row` given that row's normalizer.
    pub fn token_log_prob(&self, states: &LmStates, row: usize, word: usize, log_normalizer: f64) -> f64 {
        self.logit(states.layer2.h.row(row), word) - log_normalizer
    }

    /// SHA-256 over tensor names and values.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit_params(&mut |name, p| {
            hasher.update(name.as_bytes());
            for v in p.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        });
        crate::io::hex(&hasher.finalize())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let metadata = serde_json::json!({
            "kind": "neural_lm",
            "vocab_fingerprint": self.vocab.fingerprint(),
            "vocab_size": self.vocab.len(),
            "embedding_dim": self.embedding_dim(),
            "hidden": self.hidden(),
            "nce": self.nce,
            "base_learning_rate": self.base_learning_rate,
        });
        write_tensor_file(
            path,
            &TensorFile {
                metadata,
                tensors: self.named_values(),
            },
        )
    }

    pub fn load(path: &std::path::Path, vocab: Arc<Vocabulary>) -> Result<NeuralLm> {
        let file = read_tensor_file(path)?;
        let bad = |reason: String| Error::BadModelFile {
            path: path.to_path_buf(),
            reason,
        };
        let meta = &file.metadata;
        if meta["kind"] != "neural_lm" {
            return Err(bad("not a neural LM file".into()));
        }
        if meta["vocab_fingerprint"] != vocab.fingerprint().as_str() {
            return Err(Error::VocabularyMismatch(format!(
                "{} was trained with a different vocabulary",
                path.display()
            )));
        }
        let dim = |key: &str| {
            meta[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| bad(format!("missing {key}")))
        };
        let mut model = NeuralLm::new(vocab, dim("embedding_dim")?, dim("hidden")?, 0.1, 0);
        model.load_values(&file.tensors)?;
        model.nce = meta["nce"].as_bool().unwrap_or(false);
        model.base_learning_rate = meta["base_learning_rate"].as_f64().unwrap_or(0.0);
        Ok(model)
    }
}

impl SentenceScorer for NeuralLm {
    fn sentence_log_probs(&self, ids: &[usize]) -> Vec<f64> {
        self.score_sequence(ids)
    }
}

/// Perplexity in batches of 64 sentences.
pub fn perplexity<S: AsRef<[usize]>>(model: &NeuralLm, sentences: &[S]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::NoData("perplexity over an empty corpus".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in sentences.chunks(64) {
        let refs: Vec<&[usize]> = chunk.iter().map(|s| s.as_ref()).collect();
        for scores in model.score_batch(&refs) {
            count += scores.len();
            total += scores.iter().sum::<f64>();
        }
    }
    Ok((-total / count as f64).exp())
}

struct FitSettings<'a> {
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    loss: LmLoss,
    noise_samples: usize,
    early_stop: EarlyStopConfig,
    lr_decay: f64,
    clip_norm: f64,
    seed: u64,
    noise: Option<&'a NoiseDistribution>,
}

fn fit<S: AsRef<[usize]>>(
    model: &mut NeuralLm,
    train: &[S],
    dev: &[S],
    settings: FitSettings<'_>,
) -> Result<TrainingHistory> {
    if train.is_empty() {
        return Err(Error::NoData("no training sentences".into()));
    }
    if dev.is_empty() {
        return Err(Error::NoData("no dev sentences for early stopping".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(settings.learning_rate));
    let mut stopper = EarlyStopper::new(settings.early_stop);
    let initial_dev_ppl = perplexity(model, dev)?;
    let mut best = model.clone();
    let mut history = TrainingHistory {
        initial_dev_ppl,
        epochs: Vec::new(),
        best_epoch: None,
        best_dev_ppl: initial_dev_ppl,
        learning_rate: settings.learning_rate,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(settings.batch_size) {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| train[i].as_ref()).collect();
            model.zero_grads();
            let loss = match (settings.loss, settings.noise) {
                (LmLoss::Nce, Some(noise)) => model.batch_loss(
                    &batch,
                    Objective::Nce {
                        noise,
                        samples: settings.noise_samples,
                        rng: &mut rng,
                    },
                )?,
                _ => model.batch_loss::<ChaCha8Rng>(&batch, Objective::Softmax)?,
            };
            clip_global_norm(model, settings.clip_norm);
            adam.step(model);
            epoch_loss += loss;
            batches += 1;
        }
        if !model.all_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        let dev_ppl = perplexity(model, dev)?;
        let decision = stopper.observe(epoch, dev_ppl.ln());
        let improved = decision == StopDecision::Improved;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            dev_ppl,
            improved,
            learning_rate: adam.config.learning_rate,
        });
        if improved {
            best = model.clone();
            history.best_epoch = Some(epoch);
            history.best_dev_ppl = dev_ppl;
        }
        if decision == StopDecision::Stop {
            break;
        }
        if !improved && settings.lr_decay < 1.0 {
            *model = best.clone();
            adam.config.learning_rate *= settings.lr_decay;
        }
    }
    *model = best;
    Ok(history)
}

/// Trains the domain-general model from random initialization, keeping the
/// epoch with the best dev perplexity.
pub fn train_general<S: AsRef<[usize]>>(
    vocab: Arc<Vocabulary>,
    train: &[S],
    dev: &[S],
    config: &NlmTrainConfig,
) -> Result<(NeuralLm, TrainingHistory)> {
    config.validate()?;
    let mut model = NeuralLm::new(
        vocab,
        config.embedding_dim,
        config.hidden,
        config.init_scale,
        config.seed,
    );
    model.nce = config.loss == LmLoss::Nce;
    model.base_learning_rate = config.learning_rate;
    // Output bias starts at the log unigram distribution, so the initial
    // model is already normalized.
    let unigram = NoiseDistribution::unigram(train, model.output_size())?;
    for w in 0..model.output_size() {
        let lq = unigram.log_q(w);
        model.out_bias.value[[0, w]] = if lq.is_finite() { lq } else { MIN_LOG_BIAS };
    }
    let noise = match config.loss {
        LmLoss::Nce => Some(unigram),
        LmLoss::Softmax => None,
    };
    let history = fit(
        &mut model,
        train,
        dev,
        FitSettings {
            learning_rate: config.learning_rate,
            epochs: config.epochs,
            batch_size: config.batch_size,
            loss: config.loss,
            noise_samples: config.noise_samples,
            early_stop: config.early_stop,
            lr_decay: config.lr_decay,
            clip_norm: config.clip_norm,
            seed: crate::seed::derive_seed(config.seed, "fit"),
            noise: noise.as_ref(),
        },
    )?;
    Ok((model, history))
}

/// Continues training a copy of `general` on one domain at `lr_factor`
/// times the general model's initial learning rate. The general model is
/// not modified. Batch size, loss and noise settings follow `train_config`.
/// An NCE model draws noise from `noise`, or from the domain unigram when it
/// is `None`.
pub fn finetune<S: AsRef<[usize]>>(
    general: &NeuralLm,
    train: &[S],
    dev: &[S],
    noise: Option<&NoiseDistribution>,
    config: &FinetuneConfig,
    train_config: &NlmTrainConfig,
) -> Result<(NeuralLm, TrainingHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::NoData("domain corpus is empty".into()));
    }
    let mut model = general.clone();
    let loss = if model.nce { LmLoss::Nce } else { LmLoss::Softmax };
    let domain_noise = match (model.nce, noise) {
        (true, None) => Some(NoiseDistribution::unigram(train, model.output_size())?),
        _ => None,
    };
    let noise = if model.nce {
        noise.or(domain_noise.as_ref())
    } else {
        None
    };
    let history = fit(
        &mut model,
        train,
        dev,
        FitSettings {
            learning_rate: config.lr_factor * general.base_learning_rate,
            epochs: config.epochs,
            batch_size: train_config.batch_size,
            loss,
            noise_samples: train_config.noise_samples,
            early_stop: config.early_stop,
            lr_decay: config.lr_decay,
            clip_norm: train_config.clip_norm,
            seed: config.seed,
            noise,
        },
    )?;
    Ok((model, history))
}
