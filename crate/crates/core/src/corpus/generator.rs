//! Template-grammar corpus generator.
//!
//! Templates are whitespace-separated words with `<Placeholder>` tokens.
//! A placeholder named after a [`SlotType`] expands to a filler phrase and
//! records a slot span; any other placeholder is a plain lexical class that
//! expands without a span.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Domain, SlotSpan, SlotType, Split, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub utterances_per_domain: usize,
    pub zipf_exponent: f64,
    pub templates: BTreeMap<Domain, Vec<String>>,
    pub fillers: BTreeMap<String, Vec<String>>,
}

enum Piece {
    Word(String),
    Slot(SlotType, usize),
    Class(usize),
}

struct CompiledTemplate {
    pieces: Vec<Piece>,
}

fn placeholder(word: &str) -> Option<&str> {
    word.strip_prefix('<')?.strip_suffix('>')
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    /// Resolves placeholders to filler-list indices, checking every invariant.
    fn compile(&self) -> Result<(BTreeMap<Domain, Vec<CompiledTemplate>>, Vec<Vec<Vec<String>>>)> {
        if self.utterances_per_domain == 0 {
            return Err(Error::InvalidConfig("utterances_per_domain must be >= 1".into()));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::InvalidConfig("zipf_exponent must be finite and >= 0".into()));
        }
        let names: Vec<&String> = self.fillers.keys().collect();
        let mut filler_tokens = Vec::with_capacity(names.len());
        for name in &names {
            let phrases: Vec<Vec<String>> = self.fillers[*name].iter().map(|p| tokenize(p)).collect();
            if phrases.iter().any(Vec::is_empty) {
                return Err(Error::InvalidConfig(format!(
                    "filler list <{name}> has an empty phrase"
                )));
            }
            filler_tokens.push(phrases);
        }
        let mut compiled = BTreeMap::new();
        for domain in Domain::ALL {
            let templates = self
                .templates
                .get(&domain)
                .filter(|t| !t.is_empty())
                .ok_or_else(|| Error::InvalidConfig(format!("no templates for domain {domain}")))?;
            let mut out = Vec::with_capacity(templates.len());
            for template in templates {
                let mut pieces = Vec::new();
                for word in template.split_whitespace() {
                    match placeholder(word) {
                        Some(name) => {
                            let index = names.iter().position(|n| n.as_str() == name);
                            let index = match index {
                                Some(i) if !filler_tokens[i].is_empty() => i,
                                _ => {
                                    return Err(Error::InvalidConfig(format!(
                                        "placeholder <{name}> in '{template}' has no fillers"
                                    )))
                                }
                            };
                            match SlotType::from_name(name) {
                                Some(slot) if slot.domain() != domain => {
                                    return Err(Error::InvalidConfig(format!(
                                        "slot <{name}> may not appear in {domain} templates"
                                    )))
                                }
                                Some(slot) => pieces.push(Piece::Slot(slot, index)),
                                None => pieces.push(Piece::Class(index)),
                            }
                        }
                        None => pieces.extend(tokenize(word).into_iter().map(Piece::Word)),
                    }
                }
                if pieces.is_empty() {
                    return Err(Error::InvalidConfig(format!("template '{template}' is empty")));
                }
                out.push(CompiledTemplate { pieces });
            }
            compiled.insert(domain, out);
        }
        Ok((compiled, filler_tokens))
    }
}

fn zipf_sampler(n: usize, exponent: f64) -> WeightedIndex<f64> {
    let weights: Vec<f64> = (0..n).map(|r| ((r + 1) as f64).powf(-exponent)).collect();
    WeightedIndex::new(weights).expect("non-empty positive weights")
}

/// Generates `utterances_per_domain` utterances for each domain, in domain
/// order. All utterances are tagged `Train` until split.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Vec<Utterance>> {
    let (compiled, fillers) = config.compile()?;
    let samplers: Vec<WeightedIndex<f64>> = fillers
        .iter()
        .map(|list| zipf_sampler(list.len(), config.zipf_exponent))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut corpus = Vec::with_capacity(config.utterances_per_domain * Domain::ALL.len());
    for domain in Domain::ALL {
        let templates = &compiled[&domain];
        for i in 0..config.utterances_per_domain {
            let template = &templates[rng.gen_range(0..templates.len())];
            let mut tokens = Vec::new();
            let mut slots = Vec::new();
            for piece in &template.pieces {
                match piece {
                    Piece::Word(w) => tokens.push(w.clone()),
                    Piece::Slot(slot, list) => {
                        let phrase = &fillers[*list][samplers[*list].sample(&mut rng)];
                        let start = tokens.len();
                        tokens.extend(phrase.iter().cloned());
                        slots.push(SlotSpan {
                            start,
                            end: tokens.len(),
                            slot: *slot,
                        });
                    }
                    Piece::Class(list) => {
                        let phrase = &fillers[*list][samplers[*list].sample(&mut rng)];
                        tokens.extend(phrase.iter().cloned());
                    }
                }
            }
            corpus.push(Utterance {
                id: format!("{}-{:06}", domain.tag(), i),
                tokens,
                domain,
                slots,
                split: Split::Train,
            });
        }
    }
    Ok(corpus)
}
