//! LSTM domain classifier and threshold routing.
//!
//! Inputs are truncated to the first `max_len` tokens. Shorter inputs are
//! conceptually left-padded with an inert pad symbol; padded positions are
//! masked out of the recurrence, which makes a padded sequence exactly
//! equivalent to running the LSTM over its real tokens only. An empty input
//! therefore yields the zero initial state.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{
    clip_global_norm, read_tensor_file, softmax_cross_entropy, softmax_rows, tanh_backward, tanh_forward, visit_nested,
    visit_nested_mut, write_tensor_file, Adam, AdamConfig, Affine, EarlyStopConfig, EarlyStopper, Embedding, Lstm,
    LstmState, Matrix, PackedBatch, Param, Parameters, StopDecision, TensorFile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClfTrainConfig {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub fc_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub early_stop: EarlyStopConfig,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        ClfTrainConfig {
            embedding_dim: 100,
            hidden: 64,
            fc_dim: 64,
            learning_rate: 0.001,
            epochs: 6,
            batch_size: 32,
            max_len: 10,
            early_stop: EarlyStopConfig::default(),
            clip_norm: 5.0,
            seed: 4,
        }
    }
}

impl ClfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig(
                "classifier learning rate, batch size and max length must be positive".into(),
            ));
        }
        self.early_stop.validate()
    }
}

/// Second-pass model chosen by routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelSelector {
    General,
    Music,
    Navigation,
    Shopping,
}

impl ModelSelector {
    pub const ALL: [ModelSelector; 4] = [
        ModelSelector::General,
        ModelSelector::Music,
        ModelSelector::Navigation,
        ModelSelector::Shopping,
    ];

    pub fn for_domain(domain: Domain) -> ModelSelector {
        match domain {
            Domain::Music => ModelSelector::Music,
            Domain::Navigation => ModelSelector::Navigation,
            Domain::Shopping => ModelSelector::Shopping,
            Domain::Other => ModelSelector::General,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ModelSelector::General => "genrl",
            ModelSelector::Music => "music",
            ModelSelector::Navigation => "nav",
            ModelSelector::Shopping => "shop",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingPolicy {
    pub threshold: f64,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        RoutingPolicy { threshold: 0.85 }
    }
}

/// Argmax class (ties to the earlier class in Music, Navigation, Shopping,
/// Other order) if its posterior reaches the threshold and it is not Other;
/// otherwise the general model.
pub fn route(posterior: &[f64; 4], policy: &RoutingPolicy) -> Result<ModelSelector> {
    if !(0.0..=1.0).contains(&policy.threshold) {
        return Err(Error::InvalidConfig(format!(
            "threshold {} outside [0, 1]",
            policy.threshold
        )));
    }
    let sum: f64 = posterior.iter().sum();
    if posterior.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("malformed posterior {posterior:?}")));
    }
    let (best, p) = argmax(posterior);
    let domain = Domain::from_index(best).expect("four classes");
    if p >= policy.threshold && domain != Domain::Other {
        Ok(ModelSelector::for_domain(domain))
    } else {
        Ok(ModelSelector::General)
    }
}

fn argmax(posterior: &[f64; 4]) -> (usize, f64) {
    let mut best = 0;
    for i in 1..4 {
        if posterior[i] > posterior[best] {
            best = i;
        }
    }
    (best, posterior[best])
}

#[derive(Debug, Clone)]
pub struct DomainClassifier {
    vocab: Arc<Vocabulary>,
    embedding: Embedding,
    lstm: Lstm,
    fc: Affine,
    output: Affine,
    max_len: usize,
}

impl Parameters for DomainClassifier {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_nested("embedding", &self.embedding, f);
        visit_nested("lstm", &self.lstm, f);
        visit_nested("fc", &self.fc, f);
        visit_nested("output", &self.output, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_nested_mut("embedding", &mut self.embedding, f);
        visit_nested_mut("lstm", &mut self.lstm, f);
        visit_nested_mut("fc", &mut self.fc, f);
        visit_nested_mut("output", &mut self.output, f);
    }
}

struct ForwardCache {
    packed: PackedBatch,
    step_ids: Vec<Vec<usize>>,
    lstm: crate::nn::LstmCache,
    final_h: Matrix,
    fc_out: Matrix,
}

impl DomainClassifier {
    pub fn new(vocab: Arc<Vocabulary>, config: &ClfTrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 0.1;
        DomainClassifier {
            embedding: Embedding::new(vocab.len(), config.embedding_dim, scale, &mut rng),
            lstm: Lstm::new(config.embedding_dim, config.hidden, scale, &mut rng),
            fc: Affine::new(config.hidden, config.fc_dim, scale, &mut rng),
            output: Affine::new(config.fc_dim, 4, scale, &mut rng),
            vocab,
            max_len: config.max_len,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn truncate<'a>(&self, ids: &'a [usize]) -> &'a [usize] {
        &ids[..ids.len().min(self.max_len)]
    }

    /// Returns logits in caller order plus the cache (in packed order).
    fn forward(&self, batch: &[&[usize]]) -> (Matrix, ForwardCache) {
        let seqs: Vec<&[usize]> = batch.iter().map(|s| self.truncate(s)).collect();
        let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let packed = PackedBatch::new(&lengths);
        let step_ids: Vec<Vec<usize>> = (0..packed.steps()).map(|t| packed.gather(&seqs, t)).collect();
        let xs: Vec<Matrix> = step_ids.iter().map(|ids| self.embedding.forward(ids)).collect();
        let (_, fin, lstm) = self
            .lstm
            .forward(&xs, &LstmState::zeros(batch.len(), self.lstm.hidden()))
            .expect("embedding width matches the LSTM");
        let fc_out = tanh_forward(&self.fc.forward(&fin.h));
        let packed_logits = self.output.forward(&fc_out);
        let mut logits = Matrix::zeros(packed_logits.raw_dim());
        for (r, &orig) in packed.order.iter().enumerate() {
            logits.row_mut(orig).assign(&packed_logits.row(r));
        }
        (
            logits,
            ForwardCache {
                packed,
                step_ids,
                lstm,
                final_h: fin.h,
                fc_out,
            },
        )
    }

    /// Mean cross-entropy of the batch; accumulates gradients.
    pub fn batch_loss(&mut self, batch: &[&[usize]], labels: &[Domain]) -> f64 {
        let (_, cache) = self.forward(batch);
        let packed_logits = self.output.forward(&cache.fc_out);
        let targets: Vec<usize> = cache.packed.order.iter().map(|&i| labels[i].index()).collect();
        let (loss, d_logits) = softmax_cross_entropy(&packed_logits, &targets);
        let d_fc_out = self.output.backward(&cache.fc_out, &d_logits);
        let d_fc_in = tanh_backward(&cache.fc_out, &d_fc_out);
        let d_h = self.fc.backward(&cache.final_h, &d_fc_in);
        let grad_final = LstmState {
            c: Matrix::zeros(d_h.raw_dim()),
            h: d_h,
        };
        let hd = self.lstm.hidden();
        let grad_hs: Vec<Matrix> = cache
            .packed
            .batch_sizes
            .iter()
            .map(|&b| Matrix::zeros((b, hd)))
            .collect();
        let (dxs, _) = self.lstm.backward(&cache.lstm, &grad_hs, Some(&grad_final));
        for (ids, dx) in cache.step_ids.iter().zip(&dxs) {
            self.embedding.backward(ids, dx);
        }
        loss
    }

    pub fn posteriors_batch(&self, batch: &[&[usize]]) -> Vec<[f64; 4]> {
        if batch.is_empty() {
            return Vec::new();
        }
        let (logits, _) = self.forward(batch);
        softmax_rows(&logits)
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect()
    }

    /// Class posterior in Music, Navigation, Shopping, Other order.
    pub fn posteriors(&self, ids: &[usize]) -> [f64; 4] {
        self.posteriors_batch(&[ids])[0]
    }

    pub fn posteriors_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> [f64; 4] {
        self.posteriors(&self.vocab.encode(tokens))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let metadata = serde_json::json!({
            "kind": "domain_classifier",
            "vocab_fingerprint": self.vocab.fingerprint(),
            "embedding_dim": self.embedding.dim(),
            "hidden": self.lstm.hidden(),
            "fc_dim": self.fc.output_dim(),
            "max_len": self.max_len,
        });
        write_tensor_file(
            path,
            &TensorFile {
                metadata,
                tensors: self.named_values(),
            },
        )
    }

    pub fn load(path: &std::path::Path, vocab: Arc<Vocabulary>) -> Result<DomainClassifier> {
        let file = read_tensor_file(path)?;
        let meta = &file.metadata;
        let bad = |reason: String| Error::BadModelFile {
            path: path.to_path_buf(),
            reason,
        };
        if meta["kind"] != "domain_classifier" {
            return Err(bad("not a classifier file".into()));
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
        let config = ClfTrainConfig {
            embedding_dim: dim("embedding_dim")?,
            hidden: dim("hidden")?,
            fc_dim: dim("fc_dim")?,
            max_len: dim("max_len")?,
            ..Default::default()
        };
        let mut model = DomainClassifier::new(vocab, &config);
        model.load_values(&file.tensors)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub improved: bool,
}

fn mean_loss(model: &DomainClassifier, data: &[(Vec<usize>, Domain)]) -> f64 {
    let mut total = 0.0;
    for chunk in data.chunks(256) {
        let refs: Vec<&[usize]> = chunk.iter().map(|(s, _)| s.as_slice()).collect();
        for (post, (_, label)) in model.posteriors_batch(&refs).iter().zip(chunk) {
            total -= post[label.index()].ln();
        }
    }
    total / data.len() as f64
}

/// Trains with Adam and cross-entropy, keeping the epoch with the lowest
/// dev loss.
pub fn train_classifier(
    vocab: Arc<Vocabulary>,
    train: &[&Utterance],
    dev: &[&Utterance],
    config: &ClfTrainConfig,
) -> Result<(DomainClassifier, Vec<ClfEpoch>)> {
    config.validate()?;
    for d in Domain::ALL {
        if !train.iter().any(|u| u.domain == d) {
            return Err(Error::NoData(format!("class {d} is absent from the training data")));
        }
    }
    if dev.is_empty() {
        return Err(Error::NoData("no dev utterances for early stopping".into()));
    }
    let encode = |us: &[&Utterance]| -> Vec<(Vec<usize>, Domain)> {
        us.iter().map(|u| (vocab.encode(&u.tokens), u.domain)).collect()
    };
    let train_data = encode(train);
    let dev_data = encode(dev);
    let mut model = DomainClassifier::new(vocab.clone(), config);
    let mut adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate));
    let mut stopper = EarlyStopper::new(config.early_stop);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_seed(config.seed, "shuffle"));
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut best = model.clone();
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| train_data[i].0.as_slice()).collect();
            let labels: Vec<Domain> = chunk.iter().map(|&i| train_data[i].1).collect();
            model.zero_grads();
            let loss = model.batch_loss(&seqs, &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("classifier loss {loss} in epoch {epoch}")));
            }
            clip_global_norm(&mut model, config.clip_norm);
            adam.step(&mut model);
            total += loss;
            batches += 1;
        }
        let dev_loss = mean_loss(&model, &dev_data);
        let decision = stopper.observe(epoch, dev_loss);
        let improved = decision == StopDecision::Improved;
        if improved {
            best = model.clone();
        }
        history.push(ClfEpoch {
            epoch,
            train_loss: total / batches as f64,
            dev_loss,
            improved,
        });
        if decision == StopDecision::Stop {
            break;
        }
    }
    Ok((best, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// `confusion[gold][predicted]`, classes in Music, Navigation, Shopping,
    /// Other order; predictions are the argmax class.
    pub confusion: [[usize; 4]; 4],
    pub per_class: [ClassMetrics; 4],
    /// Max-class accuracy (τ = 0).
    pub accuracy: f64,
    pub threshold: f64,
    /// Routing accuracy at `threshold`: a non-Other prediction below the
    /// threshold counts as Other (general model).
    pub thresholded_accuracy: f64,
}

/// One-vs-rest precision/recall from argmax predictions plus thresholded
/// routing accuracy. A class never predicted has precision 0.
pub fn evaluate_predictions(
    gold: &[Domain],
    posteriors: &[[f64; 4]],
    policy: &RoutingPolicy,
) -> Result<ClassifierReport> {
    if gold.is_empty() {
        return Err(Error::NoData("classifier evaluation over an empty set".into()));
    }
    let mut confusion = [[0usize; 4]; 4];
    let mut routed_correct = 0;
    for (g, post) in gold.iter().zip(posteriors) {
        let (pred, _) = argmax(post);
        confusion[g.index()][pred] += 1;
        let routed = match route(post, policy)? {
            ModelSelector::General => Domain::Other,
            ModelSelector::Music => Domain::Music,
            ModelSelector::Navigation => Domain::Navigation,
            ModelSelector::Shopping => Domain::Shopping,
        };
        routed_correct += usize::from(routed == *g);
    }
    let total = gold.len();
    let per_class = std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..4).map(|g| confusion[g][c]).sum();
        ClassMetrics {
            precision: if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            },
            recall: if support == 0 { 0.0 } else { tp as f64 / support as f64 },
            support,
        }
    });
    let correct: usize = (0..4).map(|c| confusion[c][c]).sum();
    Ok(ClassifierReport {
        confusion,
        per_class,
        accuracy: correct as f64 / total as f64,
        threshold: policy.threshold,
        thresholded_accuracy: routed_correct as f64 / total as f64,
    })
}

pub fn evaluate_classifier(
    model: &DomainClassifier,
    eval: &[&Utterance],
    policy: &RoutingPolicy,
) -> Result<ClassifierReport> {
    let ids: Vec<Vec<usize>> = eval.iter().map(|u| model.vocab.encode(&u.tokens)).collect();
    let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    let mut posts = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(256) {
        posts.extend(model.posteriors_batch(chunk));
    }
    let gold: Vec<Domain> = eval.iter().map(|u| u.domain).collect();
    evaluate_predictions(&gold, &posts, policy)
}
