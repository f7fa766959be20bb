//! Word-level corpora: whitespace tokenization with an end-of-sentence
//! token per line and a frequency-ordered vocabulary built from the
//! training split.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Token ↔ id map. Ids follow descending training frequency, then
/// lexicographic order; the unknown token always takes the last id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Vocabulary::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds the vocabulary from tokenized training text. `cap` bounds
    /// the size including the unknown token; rarer tokens map to it.
    pub fn build<'a>(train_tokens: impl IntoIterator<Item = &'a str>, cap: Option<usize>) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in train_tokens {
            *counts.entry(t).or_default() += 1;
        }
        counts.remove(UNK);
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(cap) = cap {
            if cap < 2 {
                return Err(Error::InvalidConfig(format!("vocabulary cap {cap} leaves no room")));
            }
            ranked.truncate(cap - 1);
        }
        let mut tokens: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_string()).collect();
        tokens.push(UNK.to_string());
        Ok(Self::from_tokens(tokens))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        (self.tokens.len() - 1) as u32
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unk_id())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Whitespace tokens of every line followed by [`EOS`]. Blank lines are
/// skipped.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.lines() {
        let before = out.len();
        out.extend(line.split_whitespace());
        if out.len() > before {
            out.push(EOS);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

impl Corpus {
    pub fn from_texts(train: &str, valid: &str, test: &str, vocab_cap: Option<usize>) -> Result<Self> {
        let train_tokens = tokenize(train);
        if train_tokens.is_empty() {
            return Err(Error::Corpus("training split is empty".into()));
        }
        let vocab = Vocabulary::build(train_tokens.iter().copied(), vocab_cap)?;
        Ok(Corpus {
            train: vocab.encode(train_tokens),
            valid: vocab.encode(tokenize(valid)),
            test: vocab.encode(tokenize(test)),
            vocab,
        })
    }

    pub fn split(&self, split: Split) -> &[u32] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    String::from_utf8(bytes).map_err(|e| {
        Error::Corpus(format!(
            "{} is not valid UTF-8 (byte {})",
            path.display(),
            e.utf8_error().valid_up_to()
        ))
    })
}

/// Reads three split files and builds the corpus.
pub fn load_corpus(train: &Path, valid: &Path, test: &Path, vocab_cap: Option<usize>) -> Result<Corpus> {
    Corpus::from_texts(&read_text(train)?, &read_text(valid)?, &read_text(test)?, vocab_cap)
}
