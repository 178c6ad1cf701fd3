use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Utterance;
use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Frequency-capped word vocabulary. The unknown token always has id 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabularyFile", try_from = "VocabularyFile")]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    unk_id: usize,
    cap: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    cap: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            cap: v.cap,
            tokens: v.id_to_token,
        }
    }
}

impl TryFrom<VocabularyFile> for Vocabulary {
    type Error = Error;

    fn try_from(file: VocabularyFile) -> Result<Self> {
        if file.tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::InvalidInput("vocabulary must start with <unk>".into()));
        }
        Vocabulary::from_tokens(file.tokens[1..].iter().cloned(), file.cap)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in id order (unk is prepended).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidConfig("vocabulary cap must be >= 1".into()));
        }
        let mut id_to_token = vec![UNK_TOKEN.to_string()];
        let mut token_to_id = HashMap::from([(UNK_TOKEN.to_string(), 0)]);
        for tok in tokens {
            if token_to_id.contains_key(&tok) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary token '{tok}'")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        if id_to_token.len() > cap {
            return Err(Error::InvalidInput(format!(
                "{} tokens exceed cap {cap}",
                id_to_token.len()
            )));
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
            unk_id: 0,
            cap,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn unk_id(&self) -> usize {
        self.unk_id
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }

    /// Content hash identifying this vocabulary in model files.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for tok in &self.id_to_token {
            hasher.update(tok.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.cap.to_le_bytes());
        crate::io::hex(&hasher.finalize())
    }
}

/// Keeps the `cap - 1` most frequent tokens plus unk. Equal counts are
/// ordered by token string.
pub fn build_vocabulary<'a, I>(corpus: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    if cap == 0 {
        return Err(Error::InvalidConfig("vocabulary cap must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen_any = false;
    for utt in corpus {
        seen_any = true;
        for tok in &utt.tokens {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    if !seen_any || counts.is_empty() {
        return Err(Error::NoData("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(tok, _)| *tok != UNK_TOKEN).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap - 1);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()), cap)
}
