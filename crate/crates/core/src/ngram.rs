//! Interpolated Kneser-Ney n-gram language model.
//!
//! Token ids are vocabulary ids; two extra ids are reserved past the end of
//! the vocabulary: `bos = V` (context pad only, never predicted) and
//! `eos = V + 1`. The predictable output space is therefore `V + 1` events.
//!
//! The highest order uses raw counts. Lower orders use continuation counts
//! `N1+(• g)`, except for n-grams that begin with `bos`, which cannot be
//! left-extended and keep their raw counts.
//!
//! Serialized as JSON:
//! `{"format":"kn-ngram","version":1,"order":n,"discounts":[..],"vocab_size":V,
//!   "levels":[[[id,..,id,count],..],..]}` where `levels[k-1]` holds the
//! adjusted counts of all k-grams sorted by id sequence. Context statistics
//! are rebuilt on load, so scores round-trip bit-for-bit.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::SentenceScorer;

const FORMAT: &str = "kn-ngram";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ContextStats {
    total: u64,
    types: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Level {
    counts: HashMap<Vec<u32>, u64>,
    contexts: HashMap<Vec<u32>, ContextStats>,
}

impl Level {
    fn rebuild_contexts(&mut self) {
        self.contexts.clear();
        for (gram, &count) in &self.counts {
            let stats = self.contexts.entry(gram[..gram.len() - 1].to_vec()).or_default();
            stats.total += count;
            stats.types += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    discounts: Vec<f64>,
    vocab_size: usize,
    levels: Vec<Level>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    order: usize,
    discounts: Vec<f64>,
    vocab_size: usize,
    levels: Vec<Vec<Vec<u64>>>,
}

/// Trains an interpolated Kneser-Ney model with the same absolute discount
/// at every level.
pub fn train_kneser_ney<S: AsRef<[usize]>>(
    sentences: &[S],
    vocab_size: usize,
    order: usize,
    discount: f64,
) -> Result<NGramModel> {
    train_kneser_ney_with(sentences, vocab_size, &vec![discount; order])
}

/// Like [`train_kneser_ney`] with one discount per level (`discounts[k-1]`
/// for order k).
pub fn train_kneser_ney_with<S: AsRef<[usize]>>(
    sentences: &[S],
    vocab_size: usize,
    discounts: &[f64],
) -> Result<NGramModel> {
    let order = discounts.len();
    if order == 0 {
        return Err(Error::InvalidConfig("n-gram order must be >= 1".into()));
    }
    if discounts.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::InvalidConfig("discounts must lie in (0, 1)".into()));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidConfig("vocabulary is empty".into()));
    }
    if sentences.is_empty() {
        return Err(Error::NoData("cannot train an n-gram model on an empty corpus".into()));
    }
    let bos = vocab_size as u32;
    let eos = bos + 1;

    let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    let mut seq = Vec::new();
    for sentence in sentences {
        seq.clear();
        seq.push(bos);
        for &id in sentence.as_ref() {
            if id >= vocab_size {
                return Err(Error::InvalidInput(format!("token id {id} outside vocabulary")));
            }
            seq.push(id as u32);
        }
        seq.push(eos);
        for i in 1..seq.len() {
            for k in 1..=order.min(i + 1) {
                *raw[k - 1].entry(seq[i + 1 - k..=i].to_vec()).or_default() += 1;
            }
        }
    }

    let mut levels: Vec<Level> = Vec::with_capacity(order);
    for k in 1..=order {
        let counts = if k == order {
            raw[k - 1].clone()
        } else {
            let mut adjusted: HashMap<Vec<u32>, u64> = HashMap::new();
            for (gram, &c) in &raw[k - 1] {
                if gram[0] == bos {
                    adjusted.insert(gram.clone(), c);
                }
            }
            for gram in raw[k].keys() {
                if gram[1] != bos {
                    *adjusted.entry(gram[1..].to_vec()).or_default() += 1;
                }
            }
            adjusted
        };
        let mut level = Level {
            counts,
            contexts: HashMap::new(),
        };
        level.rebuild_contexts();
        levels.push(level);
    }
    Ok(NGramModel {
        order,
        discounts: discounts.to_vec(),
        vocab_size,
        levels,
    })
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    pub fn eos(&self) -> usize {
        self.vocab_size + 1
    }

    /// Number of predictable events (vocabulary plus end-of-sentence).
    pub fn output_size(&self) -> usize {
        self.vocab_size + 1
    }

    /// Natural-log probability of `word` after `context`. Only the last
    /// `order - 1` context ids are used; unseen contexts back off to the
    /// longest seen suffix.
    pub fn log_prob(&self, context: &[usize], word: usize) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<u32> = context[context.len() - keep..].iter().map(|&i| i as u32).collect();
        self.prob_at(keep + 1, &ctx, word as u32).ln()
    }

    /// Probability under the order-`k` distribution of this model, using the
    /// last `k - 1` ids of `context`.
    pub fn log_prob_at_order(&self, k: usize, context: &[usize], word: usize) -> f64 {
        assert!(k >= 1 && k <= self.order);
        let keep = context.len().min(k - 1);
        let ctx: Vec<u32> = context[context.len() - keep..].iter().map(|&i| i as u32).collect();
        self.prob_at(keep + 1, &ctx, word as u32).ln()
    }

    fn prob_at(&self, k: usize, ctx: &[u32], word: u32) -> f64 {
        debug_assert_eq!(ctx.len(), k - 1);
        let level = &self.levels[k - 1];
        let d = self.discounts[k - 1];
        let lower = if k == 1 {
            1.0 / self.output_size() as f64
        } else {
            self.prob_at(k - 1, &ctx[1..], word)
        };
        match level.contexts.get(ctx) {
            Some(stats) => {
                let mut gram = Vec::with_capacity(k);
                gram.extend_from_slice(ctx);
                gram.push(word);
                let count = level.counts.get(gram.as_slice()).copied().unwrap_or(0) as f64;
                let total = stats.total as f64;
                (count - d).max(0.0) / total + d * stats.types as f64 / total * lower
            }
            None => lower,
        }
    }

    /// Contexts (at their own level) observed in training, for exhaustive
    /// normalization checks.
    pub fn observed_contexts(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .levels
            .iter()
            .flat_map(|l| l.contexts.keys())
            .map(|c| c.iter().map(|&i| i as usize).collect())
            .collect();
        out.sort();
        out
    }

    /// Copy with every top-order n-gram removed; all top-order queries then
    /// back off to the next level.
    pub fn without_top_order(&self) -> NGramModel {
        let mut out = self.clone();
        if let Some(top) = out.levels.last_mut() {
            *top = Level::default();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let levels = self
            .levels
            .iter()
            .map(|level| {
                let mut rows: Vec<Vec<u64>> = level
                    .counts
                    .iter()
                    .map(|(gram, &c)| gram.iter().map(|&i| i as u64).chain([c]).collect())
                    .collect();
                rows.sort();
                rows
            })
            .collect();
        let file = ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            order: self.order,
            discounts: self.discounts.clone(),
            vocab_size: self.vocab_size,
            levels,
        };
        let bytes = serde_json::to_vec(&file)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<NGramModel> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&bytes)?;
        let bad = |reason: &str| Error::BadModelFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if file.format != FORMAT || file.version != VERSION {
            return Err(bad("unsupported format or version"));
        }
        if file.levels.len() != file.order || file.discounts.len() != file.order || file.order == 0 {
            return Err(bad("order does not match level tables"));
        }
        let mut levels = Vec::with_capacity(file.order);
        for (k, rows) in file.levels.iter().enumerate() {
            let mut counts = HashMap::with_capacity(rows.len());
            for row in rows {
                if row.len() != k + 2 || row[k + 1] == 0 {
                    return Err(bad("malformed n-gram row"));
                }
                counts.insert(row[..=k].iter().map(|&i| i as u32).collect(), row[k + 1]);
            }
            let mut level = Level {
                counts,
                contexts: HashMap::new(),
            };
            level.rebuild_contexts();
            levels.push(level);
        }
        Ok(NGramModel {
            order: file.order,
            discounts: file.discounts,
            vocab_size: file.vocab_size,
            levels,
        })
    }
}

impl SentenceScorer for NGramModel {
    fn sentence_log_probs(&self, ids: &[usize]) -> Vec<f64> {
        let mut history = Vec::with_capacity(ids.len() + 1);
        history.push(self.bos());
        let mut out = Vec::with_capacity(ids.len() + 1);
        for &id in ids.iter().chain(std::iter::once(&self.eos())) {
            out.push(self.log_prob(&history, id));
            history.push(id);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::perplexity;

    // vocab: 0=unk 1=a 2=b 3=c ; bos=4 eos=5
    fn two_sentence_model(order: usize) -> NGramModel {
        train_kneser_ney(&[vec![1usize, 2], vec![1, 3]], 4, order, 0.75).unwrap()
    }

    #[test]
    fn hand_computed_bigram() {
        let m = two_sentence_model(2);
        // Unigram continuation counts: a:1 (after bos), b:1, c:1, eos:2 => total 5, 4 types.
        // P1(b) = (1 - .75)/5 + .75 * 4/5 * 1/5 = 0.05 + 0.12
        let p1_b: f64 = 0.25 / 5.0 + 0.75 * 4.0 / 5.0 / 5.0;
        assert!((p1_b - 0.17).abs() < 1e-15);
        // P(b|a) = (1 - .75)/2 + .75 * 2/2 * P1(b)
        let expected: f64 = 0.25 / 2.0 + 0.75 * 2.0 / 2.0 * p1_b;
        assert!((expected - 0.2525).abs() < 1e-15);
        assert_eq!(m.log_prob(&[1], 2), expected.ln());
        // Unseen bigram (c, b): context c seen once with one type.
        let unseen: f64 = 0.75 * 1.0 / 1.0 * p1_b;
        assert_eq!(m.log_prob(&[3], 2), unseen.ln());
        assert!(m.log_prob(&[1], 2) > m.log_prob(&[3], 2));
        // unk never occurs: context [unk] backs off to the unigram.
        assert_eq!(m.log_prob(&[0], 2), p1_b.ln());
        assert_eq!(m.log_prob(&[0], 0), (0.75 * 4.0 / 5.0 / 5.0f64).ln());
    }

    #[test]
    fn normalization_over_all_observed_contexts() {
        let sentences = vec![
            vec![1usize, 2, 3, 1],
            vec![2, 2, 1],
            vec![3, 1, 2, 0],
            vec![1, 1, 1, 2, 3],
        ];
        for order in 1..=4 {
            let m = train_kneser_ney(&sentences, 4, order, 0.6).unwrap();
            let mut contexts = m.observed_contexts();
            contexts.push(vec![m.bos()]);
            contexts.push(vec![0, 0, 0]);
            for ctx in contexts {
                let total: f64 = (0..m.output_size())
                    .map(|w| {
                        let w = if w == m.vocab_size() { m.eos() } else { w };
                        m.log_prob(&ctx, w).exp()
                    })
                    .sum();
                assert!((total - 1.0).abs() < 1e-6, "order {order} ctx {ctx:?}: {total}");
            }
        }
    }

    #[test]
    fn order_one_is_discounted_unigram() {
        let m = two_sentence_model(1);
        // Raw unigram counts: a:2 b:1 c:1 eos:2 => total 6, 4 types, 5 outputs.
        let p = |c: f64| (c - 0.75f64).max(0.0) / 6.0 + 0.75 * 4.0 / 6.0 / 5.0;
        assert!((m.log_prob(&[], 1) - p(2.0).ln()).abs() < 1e-15);
        assert!((m.log_prob(&[2, 3], 3) - p(1.0).ln()).abs() < 1e-15);
        assert!((m.log_prob(&[], 0) - p(0.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn top_order_removal_matches_lower_order() {
        let sentences = vec![vec![1usize, 2, 3, 1], vec![2, 2, 1], vec![3, 1, 2, 0]];
        let m = train_kneser_ney(&sentences, 4, 3, 0.75).unwrap();
        let cut = m.without_top_order();
        for a in 0..6 {
            for b in 0..4 {
                for w in 0..6 {
                    if w == m.bos() {
                        continue;
                    }
                    assert_eq!(cut.log_prob(&[a, b], w), m.log_prob_at_order(2, &[a, b], w));
                }
            }
        }
    }

    #[test]
    fn save_load_bit_identical() {
        let sentences = vec![vec![1usize, 2, 3, 1], vec![2, 2, 1], vec![3, 1, 2, 0]];
        let m = train_kneser_ney(&sentences, 4, 3, 0.75).unwrap();
        let dir = std::env::temp_dir().join(format!("ngram-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.json");
        m.save(&path).unwrap();
        let back = NGramModel::load(&path).unwrap();
        for s in &sentences {
            let a = m.sentence_log_probs(s);
            let b = back.sentence_log_probs(s);
            assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rejects_bad_inputs() {
        let empty: Vec<Vec<usize>> = vec![];
        assert!(matches!(train_kneser_ney(&empty, 4, 2, 0.75), Err(Error::NoData(_))));
        assert!(train_kneser_ney(&[vec![1usize]], 4, 0, 0.75).is_err());
        assert!(train_kneser_ney(&[vec![1usize]], 4, 2, 1.0).is_err());
        assert!(train_kneser_ney(&[vec![9usize]], 4, 2, 0.5).is_err());
    }

    #[test]
    fn perplexity_order_invariant() {
        let sentences = vec![vec![1usize, 2, 3, 1], vec![2, 2, 1], vec![3, 1, 2, 0]];
        let m = train_kneser_ney(&sentences, 4, 3, 0.75).unwrap();
        let mut rev = sentences.clone();
        rev.reverse();
        let a = perplexity(&m, &sentences).unwrap();
        let b = perplexity(&m, &rev).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }
}
