//! Levenshtein alignment, WER, SlotWER, oracle WER and relative deltas.

use serde::{Deserialize, Serialize};

use crate::corpus::SlotSpan;
use crate::error::{Error, Result};

/// One edit operation. Positions index the reference and hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match {
        ref_pos: usize,
        hyp_pos: usize,
    },
    Substitute {
        ref_pos: usize,
        hyp_pos: usize,
    },
    Delete {
        ref_pos: usize,
    },
    /// `ref_pos` is the insertion point: the index of the next reference
    /// token (or the reference length at the end).
    Insert {
        ref_pos: usize,
        hyp_pos: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|op| !matches!(op, EditOp::Match { .. })).count()
    }

    pub fn breakdown(&self, ref_tokens: usize) -> WerBreakdown {
        let mut b = WerBreakdown {
            ref_tokens,
            ..Default::default()
        };
        for op in &self.ops {
            match op {
                EditOp::Match { .. } => {}
                EditOp::Substitute { .. } => b.substitutions += 1,
                EditOp::Delete { .. } => b.deletions += 1,
                EditOp::Insert { .. } => b.insertions += 1,
            }
        }
        b
    }

    /// Applies the operations to `reference`, taking inserted and
    /// substituted tokens from `hyp`.
    pub fn replay<T: Clone>(&self, reference: &[T], hyp: &[T]) -> Vec<T> {
        let mut out = Vec::new();
        for op in &self.ops {
            match *op {
                EditOp::Match { ref_pos, .. } => out.push(reference[ref_pos].clone()),
                EditOp::Substitute { hyp_pos, .. } | EditOp::Insert { hyp_pos, .. } => out.push(hyp[hyp_pos].clone()),
                EditOp::Delete { .. } => {}
            }
        }
        out
    }
}

/// Minimal-cost alignment with unit costs. The backtrace prefers Match, then
/// Substitute, then Delete, then Insert.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if reference[i - 1] == hyp[j - 1] && diag == here {
                ops.push(EditOp::Match {
                    ref_pos: i - 1,
                    hyp_pos: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
            if reference[i - 1] != hyp[j - 1] && diag + 1 == here {
                ops.push(EditOp::Substitute {
                    ref_pos: i - 1,
                    hyp_pos: j - 1,
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Delete { ref_pos: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert {
                ref_pos: i,
                hyp_pos: j - 1,
            });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_tokens: usize,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `None` when there are no reference tokens.
    pub fn rate(&self) -> Option<f64> {
        (self.ref_tokens > 0).then(|| self.errors() as f64 / self.ref_tokens as f64)
    }

    /// Error rate, 0 for an empty reference.
    pub fn wer(&self) -> f64 {
        self.rate().unwrap_or(0.0)
    }

    pub fn add(&mut self, other: &WerBreakdown) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_tokens += other.ref_tokens;
    }
}

impl std::iter::Sum for WerBreakdown {
    fn sum<I: Iterator<Item = WerBreakdown>>(iter: I) -> Self {
        let mut total = WerBreakdown::default();
        for b in iter {
            total.add(&b);
        }
        total
    }
}

pub fn utterance_wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> WerBreakdown {
    align(reference, hyp).breakdown(reference.len())
}

/// Micro-averaged WER over `(reference, hypothesis)` pairs.
pub fn corpus_wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(pairs: &[(R, H)]) -> Result<WerBreakdown> {
    if pairs.is_empty() {
        return Err(Error::NoData("corpus WER over no utterances".into()));
    }
    Ok(pairs.iter().map(|(r, h)| utterance_wer(r.as_ref(), h.as_ref())).sum())
}

/// Slot errors of one utterance. Substitutions and deletions count when the
/// reference position lies in a span; insertions count when both neighboring
/// reference positions lie in the same span. The denominator is the number
/// of slot reference tokens, so an utterance without slots gives 0/0.
pub fn utterance_slot_wer<T: PartialEq>(reference: &[T], hyp: &[T], spans: &[SlotSpan]) -> WerBreakdown {
    let in_span = |p: usize| spans.iter().any(|s| s.contains(p));
    let mut b = WerBreakdown {
        ref_tokens: spans.iter().map(|s| s.end - s.start).sum(),
        ..Default::default()
    };
    if spans.is_empty() {
        return b;
    }
    for op in align(reference, hyp).ops {
        match op {
            EditOp::Match { .. } => {}
            EditOp::Substitute { ref_pos, .. } if in_span(ref_pos) => b.substitutions += 1,
            EditOp::Delete { ref_pos } if in_span(ref_pos) => b.deletions += 1,
            EditOp::Insert { ref_pos, .. }
                if spans.iter().any(|s| ref_pos > s.start && ref_pos < s.end) => {
                    b.insertions += 1;
                }
            _ => {}
        }
    }
    b
}

/// Pooled SlotWER over `(reference, hypothesis, spans)` triples.
pub fn slot_wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(items: &[(R, H, &[SlotSpan])]) -> WerBreakdown {
    items
        .iter()
        .map(|(r, h, spans)| utterance_slot_wer(r.as_ref(), h.as_ref(), spans))
        .sum()
}

/// Index of the hypothesis with the fewest errors; ties go to the earliest.
/// `None` for an empty list.
pub fn oracle_choice<T: PartialEq, H: AsRef<[T]>>(reference: &[T], hyps: &[H]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, h) in hyps.iter().enumerate() {
        let e = align(reference, h.as_ref()).cost();
        if best.is_none_or(|(_, be)| e < be) {
            best = Some((i, e));
        }
    }
    best.map(|(i, _)| i)
}

/// Pooled WER of the per-utterance best hypothesis.
pub fn oracle_wer<T: PartialEq, R: AsRef<[T]>, H: AsRef<[T]>>(lists: &[(R, Vec<H>)]) -> Result<WerBreakdown> {
    if lists.is_empty() {
        return Err(Error::NoData("oracle WER over no n-best lists".into()));
    }
    let mut total = WerBreakdown::default();
    for (r, hyps) in lists {
        let i = oracle_choice(r.as_ref(), hyps)
            .ok_or_else(|| Error::InvalidInput("oracle WER over an empty n-best list".into()))?;
        total.add(&utterance_wer(r.as_ref(), hyps[i].as_ref()));
    }
    Ok(total)
}

/// `100 (system - baseline) / baseline`; negative means improvement.
pub fn relative_delta(system: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::InvalidInput(format!(
            "relative delta against baseline {baseline}"
        )));
    }
    Ok(100.0 * (system - baseline) / baseline)
}
