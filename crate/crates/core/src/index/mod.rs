//! Maximum inner product search over response embeddings.
//!
//! [`FlatIndex`] is the exact oracle. [`IvfIndex`] buckets vectors by k-means
//! centroid and probes the buckets whose centroids have the largest inner
//! product with the query. [`LshIndex`] pre-filters by Hamming distance
//! between random-hyperplane sign signatures and rescores candidates
//! exactly. All result lists are sorted by score descending, ties by
//! ascending id.

mod flat;
mod ivf;
mod kmeans;
mod lsh;
mod persist;
mod topk;

pub use flat::FlatIndex;
pub use ivf::{IvfIndex, IvfParams};
pub use kmeans::{assign_nearest, inertia, kmeans, KmeansParams};
pub use lsh::{LshIndex, LshParams};
pub use persist::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};
pub use topk::{sort_results, TopK};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub vector: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub id: u64,
    pub score: f32,
}

/// Validated ids plus an `n x dim` row-major vector block.
#[derive(Clone, Debug, PartialEq)]
pub struct EntrySet {
    ids: Vec<u64>,
    dim: usize,
    data: Vec<f32>,
}

impl EntrySet {
    pub fn new(ids: Vec<u64>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("index needs at least one entry".into()));
        }
        if dim == 0 {
            return Err(Error::Config("vector dimension must be >= 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::DuplicateId(dup.to_string()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("index vectors".into()));
        }
        Ok(EntrySet { ids, dim, data })
    }

    pub fn from_entries(entries: Vec<IndexEntry>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.vector.len())
            .ok_or_else(|| Error::EmptyInput("index needs at least one entry".into()))?;
        let mut ids = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len() * dim);
        for e in entries {
            if e.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.vector.len(),
                });
            }
            ids.push(e.id);
            data.extend(e.vector);
        }
        Self::new(ids, dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn into_parts(self) -> (Vec<u64>, usize, Vec<f32>) {
        (self.ids, self.dim, self.data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Flat,
    Ivf,
    Lsh,
}

impl IndexKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            IndexKind::Flat => 0,
            IndexKind::Ivf => 1,
            IndexKind::Lsh => 2,
        }
    }
}

impl std::str::FromStr for IndexKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "flat" => Ok(IndexKind::Flat),
            "ivf" => Ok(IndexKind::Ivf),
            "lsh" => Ok(IndexKind::Lsh),
            other => Err(format!("unknown index kind {other:?} (expected flat, ivf or lsh)")),
        }
    }
}

/// What to build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IndexSpec {
    Flat,
    Ivf(IvfParams),
    Lsh(LshParams),
}

/// Query-time knobs. `nprobe` is clamped to the IVF list count and
/// `rescore` to the LSH entry count; each is ignored by the other kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub topk: usize,
    pub nprobe: usize,
    pub rescore: usize,
}

impl SearchParams {
    pub fn top(topk: usize) -> Self {
        SearchParams {
            topk,
            nprobe: 8,
            rescore: topk.max(1000),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VectorIndex {
    Flat(FlatIndex),
    Ivf(IvfIndex),
    Lsh(LshIndex),
}

impl VectorIndex {
    pub fn build(entries: EntrySet, spec: IndexSpec, exec: Exec) -> Result<Self> {
        Ok(match spec {
            IndexSpec::Flat => VectorIndex::Flat(FlatIndex::build(entries)),
            IndexSpec::Ivf(p) => VectorIndex::Ivf(IvfIndex::build(entries, p, exec)?),
            IndexSpec::Lsh(p) => VectorIndex::Lsh(LshIndex::build(entries, p)?),
        })
    }

    pub fn kind(&self) -> IndexKind {
        match self {
            VectorIndex::Flat(_) => IndexKind::Flat,
            VectorIndex::Ivf(_) => IndexKind::Ivf,
            VectorIndex::Lsh(_) => IndexKind::Lsh,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VectorIndex::Flat(i) => i.len(),
            VectorIndex::Ivf(i) => i.len(),
            VectorIndex::Lsh(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorIndex::Flat(i) => i.dim(),
            VectorIndex::Ivf(i) => i.dim(),
            VectorIndex::Lsh(i) => i.dim(),
        }
    }

    pub fn search(&self, q: &[f32], params: &SearchParams, exec: Exec) -> Result<Vec<SearchResult>> {
        match self {
            VectorIndex::Flat(i) => i.search(q, params.topk, exec),
            VectorIndex::Ivf(i) => i.search(q, params.topk, params.nprobe.clamp(1, i.nlist()), exec),
            VectorIndex::Lsh(i) => {
                let rescore = params.rescore.max(params.topk).min(i.len().max(params.topk));
                i.search(q, params.topk, rescore, exec)
            }
        }
    }
}

pub(crate) fn check_query(q: &[f32], dim: usize, topk: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: q.len(),
        });
    }
    if topk == 0 {
        return Err(Error::Config("topk must be >= 1".into()));
    }
    Ok(())
}

/// Fraction of the oracle's ids that appear in `found`.
pub fn recall_against(oracle: &[SearchResult], found: &[SearchResult]) -> f64 {
    if oracle.is_empty() {
        return 1.0;
    }
    let got: HashSet<u64> = found.iter().map(|r| r.id).collect();
    oracle.iter().filter(|r| got.contains(&r.id)).count() as f64 / oracle.len() as f64
}
