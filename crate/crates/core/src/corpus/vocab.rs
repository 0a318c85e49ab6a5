use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;

const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[SEP]"];

/// Lowercased whitespace tokens of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Token to id map with contiguous ids and fixed reserved slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect())
            .expect("reserved tokens are distinct")
    }

    /// Rebuilds a vocabulary from its id-ordered token list. The first three
    /// tokens must be the reserved ones.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED {
            return Err(Error::Config("vocabulary must start with [PAD] [UNK] [SEP]".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(format!("vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase, split on whitespace, map unseen tokens to UNK. Never empty:
    /// text without tokens maps to `[UNK]`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = words(text).map(|w| self.id(&w)).collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        ids
    }
}

/// Keeps the most frequent tokens (count descending, then lexicographic) with
/// at least `min_freq` occurrences, up to `max_size` entries including the
/// three reserved ones.
pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_size: usize,
    min_freq: usize,
) -> Result<Vocabulary> {
    if max_size < 4 {
        return Err(Error::Config(format!("vocabulary max_size must be >= 4, got {max_size}")));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for w in words(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq.max(1) && !RESERVED.contains(&w.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED.len());

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(w, _)| w));
    Vocabulary::from_tokens(tokens)
}
