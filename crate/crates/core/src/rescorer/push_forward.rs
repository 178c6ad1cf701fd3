use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::neural_lm::NeuralLm;

use super::lattice::PrefixLattice;

/// Work counters for push-forward scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PushForwardStats {
    /// LSTM steps taken along trie arcs.
    pub token_steps: usize,
    /// End-of-sentence evaluations, one per hypothesis.
    pub eos_steps: usize,
}

const CHUNK: usize = 256;

/// Scores every hypothesis of every lattice with `model`, carrying the
/// recurrent state forward along trie arcs so that each arc is advanced
/// exactly once. Nodes at the same depth across lattices are batched.
///
/// Returns, per lattice and hypothesis, the per-token scores including the
/// final end-of-sentence score.
pub fn push_forward(
    model: &NeuralLm,
    vocab: &Vocabulary,
    lattices: &[&PrefixLattice],
    stats: &mut PushForwardStats,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if model.vocab().fingerprint() != vocab.fingerprint() {
        return Err(Error::VocabularyMismatch(
            "rescoring model was trained with a different vocabulary".into(),
        ));
    }
    let mut out = Vec::with_capacity(lattices.len());
    for chunk in lattices.chunks(CHUNK) {
        out.extend(push_forward_chunk(model, vocab, chunk, stats));
    }
    Ok(out)
}

fn push_forward_chunk(
    model: &NeuralLm,
    vocab: &Vocabulary,
    lattices: &[&PrefixLattice],
    stats: &mut PushForwardStats,
) -> Vec<Vec<Vec<f64>>> {
    let eos = model.eos();
    let mut arc_score: Vec<Vec<f64>> = lattices.iter().map(|l| vec![0.0; l.nodes().len()]).collect();
    let mut eos_score: Vec<Vec<f64>> = arc_score.clone();

    // Current level: (lattice, node) per state row.
    let mut level: Vec<(usize, usize)> = (0..lattices.len()).map(|l| (l, 0)).collect();
    let mut states = model.initial_states(level.len());
    while !level.is_empty() {
        let norms = model.log_normalizers(&states);
        let mut next = Vec::new();
        let mut parent_rows = Vec::new();
        let mut tokens = Vec::new();
        for (row, &(l, n)) in level.iter().enumerate() {
            let node = &lattices[l].nodes()[n];
            if !node.ends_here.is_empty() {
                eos_score[l][n] = model.token_log_prob(&states, row, eos, norms[row]);
                stats.eos_steps += node.ends_here.len();
            }
            for (tok, &child) in &node.children {
                let id = vocab.id(tok);
                arc_score[l][child] = model.token_log_prob(&states, row, id, norms[row]);
                next.push((l, child));
                parent_rows.push(row);
                tokens.push(id);
            }
        }
        stats.token_steps += tokens.len();
        if next.is_empty() {
            break;
        }
        states = model.advance(&states.select(&parent_rows), &tokens);
        level = next;
    }

    lattices
        .iter()
        .enumerate()
        .map(|(l, lat)| {
            (0..lat.hypothesis_count())
                .map(|h| {
                    let end = lat.end_node(h);
                    let mut scores: Vec<f64> = lat.path_nodes(end).iter().map(|&n| arc_score[l][n]).collect();
                    scores.push(eos_score[l][end]);
                    scores
                })
                .collect()
        })
        .collect()
}
