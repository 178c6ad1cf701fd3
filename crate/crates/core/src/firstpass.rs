//! Noisy-channel stand-in for first-pass decoding.
//!
//! A reference of `n` tokens is corrupted token by token (substitute with
//! `p_sub`, delete with `p_del`, keep otherwise) and at each of the `n + 1`
//! gaps a single word is inserted with `p_ins`. Substitutes are drawn from
//! the vocabulary (minus unk and the word itself) with weight
//! `exp(-edit_distance / T)` over characters; inserted words with weight
//! `exp(-len / T)`. The acoustic proxy of a hypothesis is
//! `acoustic_scale * channel_log_prob + N(0, sigma)`, where the channel
//! log-probability is that of the best edit script from the heard sequence.

use std::collections::{HashMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::lm::SentenceScorer;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub temperature: f64,
    pub sigma: f64,
    pub n_best: usize,
    /// Samples drawn per n-best slot before deduplication.
    pub oversample: usize,
    /// Weight of the channel log-probability in the acoustic proxy.
    pub acoustic_scale: f64,
    /// First-pass LM weight in the sort key `am + lm_weight * lm`.
    pub lm_weight: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            p_sub: 0.08,
            p_del: 0.03,
            p_ins: 0.03,
            temperature: 1.0,
            sigma: 1.0,
            n_best: 10,
            oversample: 4,
            acoustic_scale: 2.5,
            lm_weight: 1.0,
            seed: 5,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_sub, self.p_del, self.p_ins];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.p_sub + self.p_del > 1.0 || self.p_ins >= 1.0 {
            return Err(Error::InvalidConfig(
                "channel needs p_sub + p_del <= 1 and p_ins < 1 (all >= 0)".into(),
            ));
        }
        if self.n_best == 0 || self.oversample < 4 {
            return Err(Error::InvalidConfig("n_best must be >= 1 and oversample >= 4".into()));
        }
        if !(self.sigma >= 0.0) || !(self.temperature > 0.0) || !(self.acoustic_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "sigma must be >= 0; temperature and acoustic scale > 0".into(),
            ));
        }
        Ok(())
    }

    /// The identity channel: no edits, no noise.
    pub fn noiseless(n_best: usize, seed: u64) -> Self {
        ChannelConfig {
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
            sigma: 0.0,
            n_best,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    /// Acoustic proxy log-score.
    pub am: f64,
    /// First-pass LM log-probability (natural log, including end of sentence).
    pub lm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub id: String,
    #[serde(rename = "ref")]
    pub reference: Vec<String>,
    /// Sorted by first-pass score, best first.
    pub hyps: Vec<Hypothesis>,
}

impl NBestList {
    pub fn onebest(&self) -> Result<&Hypothesis> {
        self.hyps
            .first()
            .ok_or_else(|| Error::InvalidInput(format!("n-best list {} is empty", self.id)))
    }
}

/// First-pass combined score used for n-best ordering.
pub fn firstpass_score(h: &Hypothesis, lm_weight: f64) -> f64 {
    h.am + lm_weight * h.lm
}

/// One step of an edit script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelEdit {
    Keep,
    Substitute(String),
    Delete,
    /// Insertion decision at a gap: `None` means nothing inserted.
    Gap(Option<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<String>,
    /// Gap 0, token 0, gap 1, token 1, ..., gap n.
    pub script: Vec<ChannelEdit>,
    pub log_prob: f64,
}

struct SubTable {
    /// `ln q(w | source)` for every inventory word; `-inf` for the source.
    log_q: Vec<f64>,
    log_total: f64,
    sampler: Option<WeightedIndex<f64>>,
}

/// Character-level Levenshtein distance.
pub fn char_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            cur[j] = (prev[j - 1] + usize::from(a[i - 1] != b[j - 1]))
                .min(prev[j] + 1)
                .min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The corrupting channel over a fixed word inventory.
pub struct Channel {
    config: ChannelConfig,
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    insert_log_q: Vec<f64>,
    insert_log_total: f64,
    insert_sampler: Option<WeightedIndex<f64>>,
    sub_cache: HashMap<String, SubTable>,
}

impl Channel {
    /// Uses every vocabulary word except unk as the substitution and
    /// insertion inventory.
    pub fn new(config: ChannelConfig, vocab: &Vocabulary) -> Result<Channel> {
        config.validate()?;
        let words: Vec<String> = vocab
            .tokens()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != vocab.unk_id())
            .map(|(_, w)| w.clone())
            .collect();
        let word_index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let weights: Vec<f64> = words
            .iter()
            .map(|w| Self::insert_weight(w, config.temperature))
            .collect();
        let total: f64 = weights.iter().sum();
        let insert_log_q = weights.iter().map(|w| (w / total).ln()).collect();
        let insert_sampler = WeightedIndex::new(&weights).ok();
        Ok(Channel {
            config,
            words,
            word_index,
            insert_log_q,
            insert_log_total: total.ln(),
            insert_sampler,
            sub_cache: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    fn insert_weight(word: &str, temperature: f64) -> f64 {
        (-(word.chars().count() as f64) / temperature).exp()
    }

    fn ensure_sub_table(&mut self, word: &str) {
        if !self.sub_cache.contains_key(word) {
            let t = self.config.temperature;
            let weights: Vec<f64> = self
                .words
                .iter()
                .map(|w| {
                    if w == word {
                        0.0
                    } else {
                        (-(char_edit_distance(word, w) as f64) / t).exp()
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let table = SubTable {
                log_q: weights.iter().map(|w| (w / total).ln()).collect(),
                log_total: total.ln(),
                sampler: WeightedIndex::new(&weights).ok(),
            };
            self.sub_cache.insert(word.to_string(), table);
        }
    }

    /// `ln q(sub | word)`. Words outside the inventory get their unnormalized
    /// weight over the inventory total; `sub == word` is `-inf`.
    pub fn substitution_log_q(&mut self, word: &str, sub: &str) -> f64 {
        if word == sub {
            return f64::NEG_INFINITY;
        }
        self.ensure_sub_table(word);
        let table = &self.sub_cache[word];
        match self.word_index.get(sub) {
            Some(&i) => table.log_q[i],
            None => -(char_edit_distance(word, sub) as f64) / self.config.temperature - table.log_total,
        }
    }

    pub fn insertion_log_q(&self, word: &str) -> f64 {
        match self.word_index.get(word) {
            Some(&i) => self.insert_log_q[i],
            None => Self::insert_weight(word, self.config.temperature).ln() - self.insert_log_total,
        }
    }

    /// Log-probability of an edit script applied to `source`.
    pub fn script_log_prob(&mut self, source: &[String], script: &[ChannelEdit]) -> f64 {
        let c = self.config.clone();
        let mut lp = 0.0;
        let mut tok = 0;
        for edit in script {
            lp += match edit {
                ChannelEdit::Gap(None) => (1.0 - c.p_ins).ln(),
                ChannelEdit::Gap(Some(w)) => c.p_ins.ln() + self.insertion_log_q(w),
                ChannelEdit::Keep => (1.0 - c.p_sub - c.p_del).ln(),
                ChannelEdit::Delete => c.p_del.ln(),
                ChannelEdit::Substitute(w) => c.p_sub.ln() + self.substitution_log_q(&source[tok], w),
            };
            if !matches!(edit, ChannelEdit::Gap(_)) {
                tok += 1;
            }
        }
        lp
    }

    /// Log-probability of the most likely edit script turning `source` into
    /// `target` (Viterbi over scripts).
    pub fn alignment_log_prob(&mut self, source: &[String], target: &[String]) -> f64 {
        let c = self.config.clone();
        let (n, m) = (source.len(), target.len());
        let no_ins = (1.0 - c.p_ins).ln();
        let ins = c.p_ins.ln();
        let keep = (1.0 - c.p_sub - c.p_del).ln();
        let del = c.p_del.ln();
        let sub = c.p_sub.ln();
        let ins_q: Vec<f64> = target.iter().map(|w| self.insertion_log_q(w)).collect();
        let mut sub_q = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                sub_q[i][j] = if source[i] == target[j] {
                    keep
                } else {
                    sub + self.substitution_log_q(&source[i], &target[j])
                };
            }
        }
        // before[j]: tokens < i and gaps < i consumed, j targets emitted.
        let mut before = vec![f64::NEG_INFINITY; m + 1];
        before[0] = 0.0;
        let gap = |before: &[f64]| -> Vec<f64> {
            (0..=m)
                .map(|j| {
                    let stay = before[j] + no_ins;
                    if j == 0 {
                        stay
                    } else {
                        stay.max(before[j - 1] + ins + ins_q[j - 1])
                    }
                })
                .collect()
        };
        for row in &sub_q {
            let after_gap = gap(&before);
            before = (0..=m)
                .map(|j| {
                    let d = after_gap[j] + del;
                    if j == 0 {
                        d
                    } else {
                        d.max(after_gap[j - 1] + row[j - 1])
                    }
                })
                .collect();
        }
        gap(&before)[m]
    }

    pub fn identity(&self, source: &[String]) -> Candidate {
        let c = &self.config;
        let n = source.len() as f64;
        let mut script = vec![ChannelEdit::Gap(None)];
        for _ in source {
            script.push(ChannelEdit::Keep);
            script.push(ChannelEdit::Gap(None));
        }
        Candidate {
            tokens: source.to_vec(),
            script,
            log_prob: n * (1.0 - c.p_sub - c.p_del).ln() + (n + 1.0) * (1.0 - c.p_ins).ln(),
        }
    }

    fn sample_gap<R: Rng>(&self, rng: &mut R, tokens: &mut Vec<String>, script: &mut Vec<ChannelEdit>) -> f64 {
        let c = &self.config;
        if rng.gen::<f64>() < c.p_ins {
            if let Some(s) = &self.insert_sampler {
                let i = s.sample(rng);
                tokens.push(self.words[i].clone());
                script.push(ChannelEdit::Gap(Some(self.words[i].clone())));
                return c.p_ins.ln() + self.insert_log_q[i];
            }
        }
        script.push(ChannelEdit::Gap(None));
        (1.0 - c.p_ins).ln()
    }

    /// Draws one corrupted version of `source` with its script.
    pub fn sample<R: Rng>(&mut self, source: &[String], rng: &mut R) -> Candidate {
        let c = self.config.clone();
        let mut tokens = Vec::with_capacity(source.len() + 2);
        let mut script = Vec::with_capacity(2 * source.len() + 1);
        let mut lp = self.sample_gap(rng, &mut tokens, &mut script);
        for word in source {
            let u: f64 = rng.gen();
            if u < c.p_sub {
                self.ensure_sub_table(word);
                let table = &self.sub_cache[word.as_str()];
                if let Some(s) = &table.sampler {
                    let k = s.sample(rng);
                    let sub = self.words[k].clone();
                    lp += c.p_sub.ln() + table.log_q[k];
                    tokens.push(sub.clone());
                    script.push(ChannelEdit::Substitute(sub));
                } else {
                    lp += (1.0 - c.p_sub - c.p_del).ln();
                    tokens.push(word.clone());
                    script.push(ChannelEdit::Keep);
                }
            } else if u < c.p_sub + c.p_del {
                lp += c.p_del.ln();
                script.push(ChannelEdit::Delete);
            } else {
                lp += (1.0 - c.p_sub - c.p_del).ln();
                tokens.push(word.clone());
                script.push(ChannelEdit::Keep);
            }
            lp += self.sample_gap(rng, &mut tokens, &mut script);
        }
        Candidate {
            tokens,
            script,
            log_prob: lp,
        }
    }

    /// Builds the n-best list for one utterance. The per-utterance RNG is
    /// seeded from the channel seed and the utterance id.
    ///
    /// One channel draw from the reference plays the audio the decoder
    /// heard. Candidates are the reference, the heard sequence and
    /// `oversample * n_best` further corruptions of the heard sequence; each
    /// is scored by its best alignment to the heard sequence.
    pub fn simulate<M: SentenceScorer + ?Sized>(
        &mut self,
        id: &str,
        reference: &[String],
        vocab: &Vocabulary,
        firstpass: &M,
    ) -> Result<NBestList> {
        if reference.is_empty() {
            return Err(Error::InvalidInput(format!("utterance {id} has an empty reference")));
        }
        let c = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(c.seed, id));
        let mut heard = self.sample(reference, &mut rng).tokens;
        if heard.is_empty() {
            heard = reference.to_vec();
        }
        let mut unique: Vec<Vec<String>> = Vec::new();
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let mut add = |tokens: Vec<String>| {
            if !tokens.is_empty() && seen.insert(tokens.clone()) {
                unique.push(tokens);
            }
        };
        add(reference.to_vec());
        add(heard.clone());
        for _ in 0..c.oversample * c.n_best {
            add(self.sample(&heard, &mut rng).tokens);
        }
        let mut hyps = Vec::with_capacity(unique.len());
        for tokens in unique {
            let lp = self.alignment_log_prob(&heard, &tokens);
            // Drawn for every sigma, so runs that differ only in sigma share draws.
            let z: f64 = StandardNormal.sample(&mut rng);
            let am = c.acoustic_scale * lp + c.sigma * z;
            let lm = firstpass.sentence_log_prob(&vocab.encode(&tokens));
            hyps.push(Hypothesis { tokens, am, lm });
        }
        hyps.sort_by(|a, b| {
            firstpass_score(b, c.lm_weight)
                .total_cmp(&firstpass_score(a, c.lm_weight))
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        hyps.truncate(c.n_best);
        Ok(NBestList {
            id: id.to_string(),
            reference: reference.to_vec(),
            hyps,
        })
    }
}

/// Simulates n-best lists for every utterance, in input order.
pub fn simulate_corpus<M: SentenceScorer + ?Sized>(
    utterances: &[&Utterance],
    config: &ChannelConfig,
    vocab: &Vocabulary,
    firstpass: &M,
) -> Result<Vec<NBestList>> {
    let mut channel = Channel::new(config.clone(), vocab)?;
    utterances
        .iter()
        .map(|u| channel.simulate(&u.id, &u.tokens, vocab, firstpass))
        .collect()
}
