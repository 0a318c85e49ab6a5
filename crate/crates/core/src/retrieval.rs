//! The two competing frameworks: end-to-end dense search over the whole
//! response pool, and BM25 context recall followed by dense reranking.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{words, Utterance};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::index::{EntrySet, IndexSpec, SearchParams, TopK, VectorIndex};
use crate::io::{read_file, write_atomic_with};
use crate::linalg::dot;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Parallel,
    NonparallelIn,
    NonparallelOut,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::Parallel, Provenance::NonparallelIn, Provenance::NonparallelOut];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Parallel => "parallel",
            Provenance::NonparallelIn => "nonparallel_in",
            Provenance::NonparallelOut => "nonparallel_out",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    /// Caller-side identifier (e.g. the sentence id in the source file).
    #[serde(rename = "id")]
    pub key: String,
    pub text: Utterance,
    pub provenance: Provenance,
}

impl StoredResponse {
    pub fn new(key: impl Into<String>, text: Utterance, provenance: Provenance) -> Self {
        StoredResponse {
            key: key.into(),
            text,
            provenance,
        }
    }
}

/// Response texts addressed by index id, which is the position in the store.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ResponseStore {
    entries: Vec<StoredResponse>,
}

impl ResponseStore {
    pub fn new(entries: Vec<StoredResponse>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("response store needs at least one response".into()));
        }
        Ok(ResponseStore { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&StoredResponse> {
        usize::try_from(id).ok().and_then(|i| self.entries.get(i))
    }

    pub fn entries(&self) -> &[StoredResponse] {
        &self.entries
    }

    /// First id per distinct response text.
    pub fn ids_by_text(&self) -> HashMap<&str, u64> {
        let mut map = HashMap::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            map.entry(e.text.as_str()).or_insert(i as u64);
        }
        map
    }

    /// One JSON object per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_with(path, |w| {
            for e in &self.entries {
                serde_json::to_writer(&mut *w, e).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(entries)
    }
}

/// Where the response store of an index file lives.
pub fn store_path(index_path: &Path) -> PathBuf {
    let mut p = index_path.as_os_str().to_owned();
    p.push(".responses.jsonl");
    PathBuf::from(p)
}

/// Encodes every response with the response tower and indexes it under its
/// store position. Nonparallel sentences go in exactly like gold responses.
pub fn build_offline_index(
    encoder: &DualEncoder,
    responses: Vec<StoredResponse>,
    spec: IndexSpec,
    exec: Exec,
) -> Result<(VectorIndex, ResponseStore)> {
    let store = ResponseStore::new(responses)?;
    let texts: Vec<Utterance> = store.entries.iter().map(|e| e.text.clone()).collect();
    let m = encoder.encode_responses(&texts, exec);
    let entries = EntrySet::new((0..store.len() as u64).collect(), m.cols(), m.into_vec())?;
    let index = VectorIndex::build(entries, spec, exec)?;
    Ok((index, store))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: u64,
    pub score: f32,
    pub text: String,
}

fn resolve(store: &ResponseStore, id: u64, score: f32) -> Result<Hit> {
    let e = store
        .get(id)
        .ok_or_else(|| Error::Config(format!("index id {id} is not in the response store ({} entries)", store.len())))?;
    Ok(Hit {
        id,
        score,
        text: e.text.to_string(),
    })
}

pub fn e2e_search(
    encoder: &DualEncoder,
    index: &VectorIndex,
    store: &ResponseStore,
    context: &[Utterance],
    params: &SearchParams,
    exec: Exec,
) -> Result<Vec<Hit>> {
    let q = encoder.encode_context(context)?;
    index
        .search(&q, params, exec)?
        .into_iter()
        .map(|r| resolve(store, r.id, r.score))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over whole contexts, each document pointing at a response id.
#[derive(Clone, Debug, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    /// Postings sorted by document.
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    doc_response: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Recalled {
    pub doc: u32,
    pub response: u64,
    pub score: f64,
}

/// Text a context contributes to BM25: its utterances in order.
pub fn context_text(context: &[Utterance]) -> String {
    context.iter().map(Utterance::as_str).collect::<Vec<_>>().join(" ")
}

impl Bm25Index {
    pub fn build<'a>(docs: impl IntoIterator<Item = (&'a str, u64)>, params: Bm25Params) -> Result<Self> {
        if !(params.k1 >= 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::Config(format!("bad BM25 parameters k1={} b={}", params.k1, params.b)));
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::new();
        let mut doc_response = Vec::new();
        for (doc, (text, response)) in docs.into_iter().enumerate() {
            let doc = u32::try_from(doc).map_err(|_| Error::Config("too many BM25 documents".into()))?;
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0u32;
            for w in words(text) {
                *tf.entry(w).or_default() += 1;
                len += 1;
            }
            for (w, c) in tf {
                postings.entry(w).or_default().push((doc, c));
            }
            doc_len.push(len);
            doc_response.push(response);
        }
        if doc_len.is_empty() {
            return Err(Error::EmptyInput("BM25 needs at least one document".into()));
        }
        let avgdl = doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64;
        if avgdl <= 0.0 {
            return Err(Error::EmptyInput("BM25 documents contain no tokens".into()));
        }
        Ok(Bm25Index {
            params,
            postings,
            doc_len,
            avgdl,
            doc_response,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc: u32) -> u32 {
        self.doc_len[doc as usize]
    }

    pub fn response_of(&self, doc: u32) -> u64 {
        self.doc_response[doc as usize]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, doc: u32) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, doc: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let dl = self.doc_len[doc as usize] as f64;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl))
    }

    /// Sum over query tokens (repeats count again) of the Okapi term weight.
    pub fn score(&self, query: &[String], doc: u32) -> f64 {
        query
            .iter()
            .map(|t| match self.term_freq(t, doc) {
                0 => 0.0,
                tf => self.term_score(self.idf(t), tf, doc),
            })
            .sum()
    }

    /// The `n` best documents that share at least one token with `query`,
    /// by score descending then document id.
    pub fn recall(&self, query: &str, n: usize) -> Vec<Recalled> {
        let terms: Vec<String> = words(query).collect();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in &terms {
            let Some(postings) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(doc, tf) in postings {
                *acc.entry(doc).or_insert(0.0) += self.term_score(idf, tf, doc);
            }
        }
        let mut hits: Vec<Recalled> = acc
            .into_iter()
            .map(|(doc, score)| Recalled {
                doc,
                response: self.doc_response[doc as usize],
                score,
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc)));
        hits.truncate(n);
        hits
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rerank {
    DenseExact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub recall_size: usize,
    pub rerank: Rerank,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            recall_size: 100,
            rerank: Rerank::DenseExact,
        }
    }
}

/// BM25 context recall, then exact dense rescoring of the recalled
/// responses. Responses recalled through several documents count once.
pub fn pipeline_search(
    encoder: &DualEncoder,
    bm25: &Bm25Index,
    store: &ResponseStore,
    context: &[Utterance],
    config: &PipelineConfig,
    topk: usize,
) -> Result<Vec<Hit>> {
    if config.recall_size == 0 {
        return Err(Error::Config("recall size must be >= 1".into()));
    }
    let q = encoder.encode_context(context)?;
    let recalled = bm25.recall(&context_text(context), config.recall_size);
    if recalled.is_empty() {
        log::warn!("BM25 recall is empty for context {:?}", context_text(context));
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let mut top = TopK::new(topk);
    for r in recalled {
        if !seen.insert(r.response) {
            continue;
        }
        let text = &store
            .get(r.response)
            .ok_or_else(|| Error::Config(format!("BM25 document {} points at unknown response {}", r.doc, r.response)))?
            .text;
        top.push(r.response, dot(&q, &encoder.encode_response(text)));
    }
    top.into_sorted()
        .into_iter()
        .map(|r| resolve(store, r.id, r.score))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ranked {
    /// Position in the input candidate list.
    pub position: usize,
    pub score: f32,
}

/// Scores each candidate against the context, best first, ties by input
/// position.
pub fn rerank_candidates(encoder: &DualEncoder, context: &[Utterance], candidates: &[Utterance]) -> Result<Vec<Ranked>> {
    let q = encoder.encode_context(context)?;
    let mut ranked: Vec<Ranked> = candidates
        .iter()
        .enumerate()
        .map(|(position, c)| Ranked {
            position,
            score: dot(&q, &encoder.encode_response(c)),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.position.cmp(&b.position)));
    Ok(ranked)
}

/// A full-pool response retrieval system.
pub trait Retriever: Sync {
    fn name(&self) -> &str;
    fn store(&self) -> &ResponseStore;
    fn retrieve(&self, context: &[Utterance], topk: usize) -> Result<Vec<Hit>>;
}

pub struct EndToEnd<'a> {
    pub encoder: &'a DualEncoder,
    pub index: &'a VectorIndex,
    pub store: &'a ResponseStore,
    pub params: SearchParams,
    pub exec: Exec,
}

impl Retriever for EndToEnd<'_> {
    fn name(&self) -> &str {
        "e2e"
    }

    fn store(&self) -> &ResponseStore {
        self.store
    }

    fn retrieve(&self, context: &[Utterance], topk: usize) -> Result<Vec<Hit>> {
        let params = SearchParams { topk, ..self.params };
        e2e_search(self.encoder, self.index, self.store, context, &params, self.exec)
    }
}

pub struct Pipeline<'a> {
    pub encoder: &'a DualEncoder,
    pub bm25: &'a Bm25Index,
    pub store: &'a ResponseStore,
    pub config: PipelineConfig,
}

impl Retriever for Pipeline<'_> {
    fn name(&self) -> &str {
        "pipeline"
    }

    fn store(&self) -> &ResponseStore {
        self.store
    }

    fn retrieve(&self, context: &[Utterance], topk: usize) -> Result<Vec<Hit>> {
        pipeline_search(self.encoder, self.bm25, self.store, context, &self.config, topk)
    }
}
