//! Dialogue corpora: sessions, nonparallel sentences, labeled eval sessions,
//! fine-grained augmentation and the vocabulary.

mod augment;
mod vocab;

pub use augment::{augment_fine_grained, build_train_set};
pub use vocab::{build_vocab, words, Vocabulary, PAD_ID, SEP_ID, UNK_ID};

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One speaker turn. Never empty after trimming.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Utterance(String);

impl Utterance {
    pub fn new(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        (!text.trim().is_empty()).then_some(Utterance(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Utterance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Utterance::new(s).ok_or_else(|| serde::de::Error::custom("utterance is empty"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairOrigin {
    Original,
    Augmented,
}

/// A training unit `(context, response)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextResponsePair {
    /// Session the pair was cut from.
    pub session: String,
    pub context: Vec<Utterance>,
    pub response: Utterance,
    #[serde(default = "positive")]
    pub label: u8,
    pub origin: PairOrigin,
}

fn positive() -> u8 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonparallelSentence {
    pub id: String,
    pub text: Utterance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: Utterance,
    /// Binary for re-rank metrics, graded (e.g. 1-5) for NDCG.
    pub rel: f64,
}

/// A context with a labeled candidate list, the unit of re-rank evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSession {
    pub id: String,
    pub context: Vec<Utterance>,
    pub candidates: Vec<Candidate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    PairedJsonl,
    NonparallelJsonl,
    EvalJsonl,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Sessions(Vec<DialogueSession>),
    Sentences(Vec<NonparallelSentence>),
    Eval(Vec<EvalSession>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Sessions(v) => v.len(),
            Corpus::Sentences(v) => v.len(),
            Corpus::Eval(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loads a JSON-lines corpus. Blank lines are ignored; every other line must
/// parse under `format`. Input order is preserved.
pub fn load_sessions(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, format)
}

pub fn load_paired(path: &Path) -> Result<Vec<DialogueSession>> {
    match load_sessions(path, CorpusFormat::PairedJsonl)? {
        Corpus::Sessions(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_nonparallel(path: &Path) -> Result<Vec<NonparallelSentence>> {
    match load_sessions(path, CorpusFormat::NonparallelJsonl)? {
        Corpus::Sentences(s) => Ok(s),
        _ => unreachable!(),
    }
}

pub fn load_eval(path: &Path) -> Result<Vec<EvalSession>> {
    match load_sessions(path, CorpusFormat::EvalJsonl)? {
        Corpus::Eval(s) => Ok(s),
        _ => unreachable!(),
    }
}

/// Parses corpus text; `origin` only labels error messages.
pub fn parse_corpus(text: &str, origin: &Path, format: CorpusFormat) -> Result<Corpus> {
    let lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l));

    let corpus = match format {
        CorpusFormat::PairedJsonl => Corpus::Sessions(parse_lines(lines, origin, |s: &DialogueSession| {
            if s.utterances.is_empty() {
                return Err("session has no utterances".into());
            }
            Ok(s.id.clone())
        })?),
        CorpusFormat::NonparallelJsonl => {
            Corpus::Sentences(parse_lines(lines, origin, |s: &NonparallelSentence| Ok(s.id.clone()))?)
        }
        CorpusFormat::EvalJsonl => Corpus::Eval(parse_lines(lines, origin, |s: &EvalSession| {
            if s.context.is_empty() {
                return Err("eval session has an empty context".into());
            }
            if s.candidates.is_empty() {
                return Err("eval session has no candidates".into());
            }
            if let Some(c) = s.candidates.iter().find(|c| !c.rel.is_finite() || c.rel < 0.0) {
                return Err(format!("relevance {} is not a non-negative number", c.rel));
            }
            Ok(s.id.clone())
        })?),
    };
    if corpus.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no records", origin.display())));
    }
    Ok(corpus)
}

fn parse_lines<'a, T, V>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    origin: &Path,
    validate: V,
) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    V: Fn(&T) -> std::result::Result<String, String>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, raw) in lines {
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let record: T = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let id = validate(&record).map_err(parse_err)?;
        if !seen.insert(id.clone()) {
            return Err(parse_err(format!("duplicate id {id:?}")));
        }
        out.push(record);
    }
    Ok(out)
}
