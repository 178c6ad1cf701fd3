//! Shared language-model scoring interface and perplexity.

use crate::error::{Error, Result};

/// A model that assigns natural-log probabilities to every token of an
/// encoded sentence plus the end-of-sentence marker.
pub trait SentenceScorer {
    /// Returns `ids.len() + 1` log-probabilities; the last one is the
    /// end-of-sentence event.
    fn sentence_log_probs(&self, ids: &[usize]) -> Vec<f64>;

    fn sentence_log_prob(&self, ids: &[usize]) -> f64 {
        self.sentence_log_probs(ids).iter().sum()
    }
}

/// `exp(-(1/T) Σ log p)` with `T` counting end-of-sentence markers.
pub fn perplexity<M, S>(model: &M, sentences: &[S]) -> Result<f64>
where
    M: SentenceScorer + ?Sized,
    S: AsRef<[usize]>,
{
    if sentences.is_empty() {
        return Err(Error::NoData("perplexity over an empty corpus".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in sentences {
        let lps = model.sentence_log_probs(s.as_ref());
        count += lps.len();
        total += lps.iter().sum::<f64>();
    }
    Ok((-total / count as f64).exp())
}
