//! Corpus data model, tokenization, vocabulary and splits.

mod generator;
pub mod lexicon;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub use generator::{generate_corpus, GeneratorConfig};
pub use vocab::{build_vocabulary, Vocabulary, UNK_TOKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Music,
    Navigation,
    Shopping,
    Other,
}

impl Domain {
    /// Fixed class order, also used for classifier outputs and tie-breaks.
    pub const ALL: [Domain; 4] = [Domain::Music, Domain::Navigation, Domain::Shopping, Domain::Other];

    /// The three domains that own an adapted model.
    pub const ADAPTED: [Domain; 3] = [Domain::Music, Domain::Navigation, Domain::Shopping];

    pub fn index(self) -> usize {
        match self {
            Domain::Music => 0,
            Domain::Navigation => 1,
            Domain::Shopping => 2,
            Domain::Other => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<Domain> {
        Domain::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Music => "Music",
            Domain::Navigation => "Navigation",
            Domain::Shopping => "Shopping",
            Domain::Other => "Other",
        }
    }

    /// Short lowercase tag used in file names and CLI flags.
    pub fn tag(self) -> &'static str {
        match self {
            Domain::Music => "music",
            Domain::Navigation => "nav",
            Domain::Shopping => "shop",
            Domain::Other => "other",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "music" => Ok(Domain::Music),
            "nav" | "navigation" => Ok(Domain::Navigation),
            "shop" | "shopping" => Ok(Domain::Shopping),
            "other" => Ok(Domain::Other),
            _ => Err(Error::InvalidInput(format!("unknown domain '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotType {
    SongName,
    ArtistName,
    AlbumName,
    PlaceName,
    StreetName,
    ItemName,
}

impl SlotType {
    pub const ALL: [SlotType; 6] = [
        SlotType::SongName,
        SlotType::ArtistName,
        SlotType::AlbumName,
        SlotType::PlaceName,
        SlotType::StreetName,
        SlotType::ItemName,
    ];

    /// The only domain in which this slot may occur.
    pub fn domain(self) -> Domain {
        match self {
            SlotType::SongName | SlotType::ArtistName | SlotType::AlbumName => Domain::Music,
            SlotType::PlaceName | SlotType::StreetName => Domain::Navigation,
            SlotType::ItemName => Domain::Shopping,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SlotType::SongName => "SongName",
            SlotType::ArtistName => "ArtistName",
            SlotType::AlbumName => "AlbumName",
            SlotType::PlaceName => "PlaceName",
            SlotType::StreetName => "StreetName",
            SlotType::ItemName => "ItemName",
        }
    }

    pub fn from_name(name: &str) -> Option<SlotType> {
        SlotType::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub slot: SlotType,
}

impl SlotSpan {
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub tokens: Vec<String>,
    pub domain: Domain,
    pub slots: Vec<SlotSpan>,
    pub split: Split,
}

impl Utterance {
    /// Checks the token and slot-span invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidInput(format!("utterance {} has no tokens", self.id)));
        }
        let mut prev_end = 0;
        for span in &self.slots {
            if span.start >= span.end || span.end > self.tokens.len() || span.start < prev_end {
                return Err(Error::InvalidInput(format!(
                    "utterance {} has invalid slot span {}..{}",
                    self.id, span.start, span.end
                )));
            }
            if span.slot.domain() != self.domain {
                return Err(Error::InvalidInput(format!(
                    "utterance {} ({}) carries foreign slot {}",
                    self.id,
                    self.domain,
                    span.slot.name()
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }

    pub fn slot_token_count(&self) -> usize {
        self.slots.iter().map(|s| s.end - s.start).sum()
    }
}

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Lowercases, splits on whitespace runs and strips punctuation from token
/// edges. Tokens that are entirely punctuation disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(is_edge_punctuation).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Tags every utterance Train/Dev/Eval with a per-domain stratified 8-1-1
/// shuffle split. Input order is preserved in the output.
pub fn split_corpus(corpus: &[Utterance], seed: u64) -> Result<Vec<Utterance>> {
    if corpus.is_empty() {
        return Err(Error::NoData("cannot split an empty corpus".into()));
    }
    let mut by_domain: BTreeMap<Domain, Vec<usize>> = BTreeMap::new();
    for (i, utt) in corpus.iter().enumerate() {
        by_domain.entry(utt.domain).or_default().push(i);
    }
    let mut out = corpus.to_vec();
    for (domain, mut indices) in by_domain {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, domain.name()));
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_train = n * 8 / 10;
        let n_dev = n / 10;
        for (rank, &i) in indices.iter().enumerate() {
            out[i].split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_dev {
                Split::Dev
            } else {
                Split::Eval
            };
        }
    }
    Ok(out)
}

pub fn select(corpus: &[Utterance], split: Option<Split>, domain: Option<Domain>) -> Vec<&Utterance> {
    corpus
        .iter()
        .filter(|u| split.is_none_or(|s| u.split == s))
        .filter(|u| domain.is_none_or(|d| u.domain == d))
        .collect()
}

pub fn write_corpus(path: &Path, corpus: &[Utterance]) -> Result<()> {
    crate::io::write_jsonl(path, corpus)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Utterance>> {
    let corpus: Vec<Utterance> = crate::io::read_jsonl(path)?;
    for utt in &corpus {
        utt.validate()?;
    }
    Ok(corpus)
}
