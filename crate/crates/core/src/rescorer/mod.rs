//! Second-pass rescoring of n-best lists.
//!
//! The combined score of hypothesis `h` is
//! `am(h) + γ (λ lm_fp(h) + (1 - λ) lm_sp(h))` where `lm_sp` is the
//! second-pass log-probability including end of sentence, plus `ln(unk_scale)`
//! for every token outside the vocabulary. Ties keep first-pass order.

mod lattice;
mod push_forward;

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use lattice::{Node, PrefixLattice};
pub use push_forward::{push_forward, PushForwardStats};

use crate::classifier::{route, DomainClassifier, ModelSelector, RoutingPolicy};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::firstpass::NBestList;
use crate::neural_lm::NeuralLm;
use crate::nn::logsumexp;
use crate::weight_opt::{em_mixture_weights, EmConfig, EmResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub unk_scale: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            lambda: 0.5,
            gamma: 1.0,
            unk_scale: 1e-5,
        }
    }
}

impl RescoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "need lambda in [0,1] and gamma in (0,2], got {} and {}",
                self.lambda, self.gamma
            )));
        }
        if !(self.unk_scale > 0.0 && self.unk_scale <= 1.0) {
            return Err(Error::InvalidConfig("unk_scale must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn combined_score(am: f64, lm_fp: f64, lm_sp: f64, config: &RescoreConfig) -> f64 {
    am + config.gamma * (config.lambda * lm_fp + (1.0 - config.lambda) * lm_sp)
}

/// Hypothesis indices with combined scores, best first; equal scores keep
/// first-pass order.
pub fn rank(am: &[f64], lm_fp: &[f64], lm_sp: &[f64], config: &RescoreConfig) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..am.len())
        .map(|i| (i, combined_score(am[i], lm_fp[i], lm_sp[i], config)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Index of the top hypothesis under `config`.
pub fn best_index(am: &[f64], lm_fp: &[f64], lm_sp: &[f64], config: &RescoreConfig) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..am.len() {
        let s = combined_score(am[i], lm_fp[i], lm_sp[i], config);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum System {
    General,
    Music,
    Navigation,
    Shopping,
    DomainAware,
    EmBaseline,
}

impl System {
    pub const ALL: [System; 6] = [
        System::General,
        System::Music,
        System::Navigation,
        System::Shopping,
        System::DomainAware,
        System::EmBaseline,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            System::General => "genrl",
            System::Music => "music",
            System::Navigation => "nav",
            System::Shopping => "shop",
            System::DomainAware => "domain",
            System::EmBaseline => "em-baseline",
        }
    }

    /// The single model a fixed system always uses.
    pub fn fixed_model(self) -> Option<ModelSelector> {
        match self {
            System::General => Some(ModelSelector::General),
            System::Music => Some(ModelSelector::Music),
            System::Navigation => Some(ModelSelector::Navigation),
            System::Shopping => Some(ModelSelector::Shopping),
            System::DomainAware | System::EmBaseline => None,
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<System> {
        System::ALL.into_iter().find(|sys| sys.tag() == s).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown system {s:?} (genrl|domain|music|nav|shop|em-baseline)"
            ))
        })
    }
}

/// The general model and the three domain models, sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct ModelBank {
    vocab: Arc<Vocabulary>,
    models: Vec<NeuralLm>,
}

impl ModelBank {
    pub fn new(general: NeuralLm, music: NeuralLm, navigation: NeuralLm, shopping: NeuralLm) -> Result<ModelBank> {
        let vocab = general.vocab().clone();
        let models = vec![general, music, navigation, shopping];
        if models.iter().any(|m| m.vocab().fingerprint() != vocab.fingerprint()) {
            return Err(Error::VocabularyMismatch(
                "model bank members use different vocabularies".into(),
            ));
        }
        Ok(ModelBank { vocab, models })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn get(&self, selector: ModelSelector) -> &NeuralLm {
        &self.models[selector.index()]
    }

    /// True when every member holds the very same vocabulary object.
    pub fn shares_vocab_object(&self) -> bool {
        self.models.iter().all(|m| Arc::ptr_eq(m.vocab(), &self.vocab))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHyp {
    pub tokens: Vec<String>,
    pub score: f64,
}

/// One line of rescoring output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreRecord {
    pub id: String,
    pub system: String,
    pub chosen_model: String,
    pub ranked: Vec<RankedHyp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// An n-best list with first-pass scores, routing decision, EM weights and
/// the per-token scores of all four models cached, so any system and any
/// (λ, γ) can be evaluated without touching the networks again.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub id: String,
    pub reference: Vec<String>,
    pub hyps: Vec<Vec<String>>,
    pub am: Vec<f64>,
    pub lm_fp: Vec<f64>,
    pub unk_counts: Vec<usize>,
    /// `token_log_probs[model][hyp]`, including end of sentence.
    pub token_log_probs: Vec<Vec<Vec<f64>>>,
    pub posterior: [f64; 4],
    pub route: ModelSelector,
    pub em: EmResult,
}

impl ScoredList {
    fn unk_penalty(&self, hyp: usize, unk_scale: f64) -> f64 {
        self.unk_counts[hyp] as f64 * unk_scale.ln()
    }

    pub fn model_lm_sp(&self, model: ModelSelector, unk_scale: f64) -> Vec<f64> {
        self.token_log_probs[model.index()]
            .iter()
            .enumerate()
            .map(|(h, lps)| lps.iter().sum::<f64>() + self.unk_penalty(h, unk_scale))
            .collect()
    }

    /// Linear mixture in probability space, token by token.
    pub fn mixture_lm_sp(&self, weights: &[f64], unk_scale: f64) -> Vec<f64> {
        (0..self.hyps.len())
            .map(|h| {
                let len = self.token_log_probs[0][h].len();
                let total: f64 = (0..len)
                    .map(|t| {
                        let terms: Vec<f64> = weights
                            .iter()
                            .enumerate()
                            .filter(|(_, &w)| w > 0.0)
                            .map(|(k, &w)| w.ln() + self.token_log_probs[k][h][t])
                            .collect();
                        logsumexp(terms.iter().copied())
                    })
                    .sum();
                total + self.unk_penalty(h, unk_scale)
            })
            .collect()
    }

    pub fn chosen_model(&self, system: System) -> &'static str {
        match system {
            System::DomainAware => self.route.tag(),
            System::EmBaseline => "mixture",
            other => other.fixed_model().expect("fixed system").tag(),
        }
    }

    pub fn system_lm_sp(&self, system: System, unk_scale: f64) -> Vec<f64> {
        match system {
            System::DomainAware => self.model_lm_sp(self.route, unk_scale),
            System::EmBaseline => self.mixture_lm_sp(&self.em.weights, unk_scale),
            other => self.model_lm_sp(other.fixed_model().expect("fixed system"), unk_scale),
        }
    }

    pub fn rescore(&self, system: System, config: &RescoreConfig) -> RescoreRecord {
        let lm_sp = self.system_lm_sp(system, config.unk_scale);
        let ranked = rank(&self.am, &self.lm_fp, &lm_sp, config)
            .into_iter()
            .map(|(i, score)| RankedHyp {
                tokens: self.hyps[i].clone(),
                score,
            })
            .collect();
        RescoreRecord {
            id: self.id.clone(),
            system: system.tag().to_string(),
            chosen_model: self.chosen_model(system).to_string(),
            ranked,
            weights: (system == System::EmBaseline).then(|| self.em.weights.clone()),
        }
    }
}

/// Runs push-forward with every model of the bank over all lists, routes
/// each list on its one-best and estimates EM mixture weights on the
/// one-best tokens.
pub fn score_lists(
    lists: &[NBestList],
    bank: &ModelBank,
    classifier: &DomainClassifier,
    policy: &RoutingPolicy,
    em_config: &EmConfig,
    stats: &mut PushForwardStats,
) -> Result<Vec<ScoredList>> {
    let vocab = bank.vocab();
    if classifier.vocab().fingerprint() != vocab.fingerprint() {
        return Err(Error::VocabularyMismatch(
            "classifier and LMs use different vocabularies".into(),
        ));
    }
    for l in lists {
        l.onebest()?;
    }
    let lattices: Vec<PrefixLattice> = lists
        .iter()
        .map(|l| PrefixLattice::build(&l.hyps.iter().map(|h| h.tokens.clone()).collect::<Vec<_>>()))
        .collect();
    let lattice_refs: Vec<&PrefixLattice> = lattices.iter().collect();
    let mut per_model = Vec::with_capacity(4);
    for sel in ModelSelector::ALL {
        per_model.push(push_forward(bank.get(sel), vocab, &lattice_refs, stats)?);
    }
    let onebest_ids: Vec<Vec<usize>> = lists.iter().map(|l| vocab.encode(&l.hyps[0].tokens)).collect();
    let onebest_refs: Vec<&[usize]> = onebest_ids.iter().map(Vec::as_slice).collect();
    let mut posteriors = Vec::with_capacity(lists.len());
    for chunk in onebest_refs.chunks(256) {
        posteriors.extend(classifier.posteriors_batch(chunk));
    }

    let unk = vocab.unk_id();
    let mut out = Vec::with_capacity(lists.len());
    for (i, list) in lists.iter().enumerate() {
        let token_log_probs: Vec<Vec<Vec<f64>>> = per_model.iter().map(|m| m[i].clone()).collect();
        let probs: Vec<Vec<f64>> = token_log_probs
            .iter()
            .map(|m| m[0].iter().map(|lp| lp.exp()).collect())
            .collect();
        let em = em_mixture_weights(&probs, em_config)?;
        out.push(ScoredList {
            id: list.id.clone(),
            reference: list.reference.clone(),
            hyps: list.hyps.iter().map(|h| h.tokens.clone()).collect(),
            am: list.hyps.iter().map(|h| h.am).collect(),
            lm_fp: list.hyps.iter().map(|h| h.lm).collect(),
            unk_counts: list
                .hyps
                .iter()
                .map(|h| vocab.encode(&h.tokens).iter().filter(|&&id| id == unk).count())
                .collect(),
            token_log_probs,
            posterior: posteriors[i],
            route: route(&posteriors[i], policy)?,
            em,
        });
    }
    Ok(out)
}

/// Rescores one n-best list with a single model via push-forward.
pub fn push_forward_rescore(
    nbest: &NBestList,
    model: &NeuralLm,
    vocab: &Vocabulary,
    config: &RescoreConfig,
    stats: &mut PushForwardStats,
) -> Result<Vec<RankedHyp>> {
    config.validate()?;
    let hyps: Vec<Vec<String>> = nbest.hyps.iter().map(|h| h.tokens.clone()).collect();
    let lattice = PrefixLattice::build(&hyps);
    let scores = push_forward(model, vocab, &[&lattice], stats)?
        .pop()
        .expect("one lattice");
    let unk = vocab.unk_id();
    let lm_sp: Vec<f64> = scores
        .iter()
        .zip(&hyps)
        .map(|(lps, h)| {
            let unks = vocab.encode(h).iter().filter(|&&id| id == unk).count();
            lps.iter().sum::<f64>() + unks as f64 * config.unk_scale.ln()
        })
        .collect();
    let am: Vec<f64> = nbest.hyps.iter().map(|h| h.am).collect();
    let lm_fp: Vec<f64> = nbest.hyps.iter().map(|h| h.lm).collect();
    Ok(rank(&am, &lm_fp, &lm_sp, config)
        .into_iter()
        .map(|(i, score)| RankedHyp {
            tokens: hyps[i].clone(),
            score,
        })
        .collect())
}

/// Classifies the one-best, routes, and rescores with the routed model.
pub fn domain_aware_rescore(
    nbest: &NBestList,
    classifier: &DomainClassifier,
    policy: &RoutingPolicy,
    bank: &ModelBank,
    config: &RescoreConfig,
    stats: &mut PushForwardStats,
) -> Result<(Vec<RankedHyp>, ModelSelector)> {
    let onebest = nbest.onebest()?;
    let selector = route(&classifier.posteriors_tokens(&onebest.tokens), policy)?;
    let ranked = push_forward_rescore(nbest, bank.get(selector), bank.vocab(), config, stats)?;
    Ok((ranked, selector))
}

/// Linear-mixture rescoring with per-utterance EM weights estimated on the
/// one-best.
pub fn em_interpolated_rescore(
    nbest: &NBestList,
    bank: &ModelBank,
    em_config: &EmConfig,
    config: &RescoreConfig,
    stats: &mut PushForwardStats,
) -> Result<(Vec<RankedHyp>, Vec<f64>)> {
    config.validate()?;
    nbest.onebest()?;
    let hyps: Vec<Vec<String>> = nbest.hyps.iter().map(|h| h.tokens.clone()).collect();
    let lattice = PrefixLattice::build(&hyps);
    let mut token_log_probs = Vec::with_capacity(4);
    for sel in ModelSelector::ALL {
        token_log_probs.push(
            push_forward(bank.get(sel), bank.vocab(), &[&lattice], stats)?
                .pop()
                .expect("one lattice"),
        );
    }
    let probs: Vec<Vec<f64>> = token_log_probs
        .iter()
        .map(|m| m[0].iter().map(|lp| lp.exp()).collect())
        .collect();
    let em = em_mixture_weights(&probs, em_config)?;
    let vocab = bank.vocab();
    let unk = vocab.unk_id();
    let list = ScoredList {
        id: nbest.id.clone(),
        reference: nbest.reference.clone(),
        am: nbest.hyps.iter().map(|h| h.am).collect(),
        lm_fp: nbest.hyps.iter().map(|h| h.lm).collect(),
        unk_counts: hyps
            .iter()
            .map(|h| vocab.encode(h).iter().filter(|&&id| id == unk).count())
            .collect(),
        hyps,
        token_log_probs,
        posterior: [0.0; 4],
        route: ModelSelector::General,
        em,
    };
    let record = list.rescore(System::EmBaseline, config);
    Ok((record.ranked, list.em.weights))
}
