use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::flat::scan;
use super::kmeans::{assign_nearest, kmeans, KmeansParams};
use super::topk::TopK;
use super::{check_query, EntrySet, SearchResult};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IvfParams {
    pub nlist: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Train the quantizer on a seeded random subset of this many vectors
    /// instead of the whole set. Every vector is still assigned to a list.
    pub train_size: Option<usize>,
}

impl IvfParams {
    pub fn new(nlist: usize, seed: u64) -> Self {
        IvfParams {
            nlist,
            seed,
            max_iters: 20,
            train_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct InvertedList {
    pub ids: Vec<u64>,
    pub data: Vec<f32>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    centroids: Vec<f32>,
    lists: Vec<InvertedList>,
}

impl IvfIndex {
    pub fn build(entries: EntrySet, params: IvfParams, exec: Exec) -> Result<Self> {
        let dim = entries.dim();
        let n = entries.len();
        if params.nlist == 0 || params.nlist > n {
            return Err(Error::Config(format!("nlist must be in 1..={n}, got {}", params.nlist)));
        }
        let kparams = KmeansParams {
            nlist: params.nlist,
            max_iters: params.max_iters,
            seed: params.seed,
        };
        let centroids = match params.train_size {
            Some(m) if m < n => {
                let m = m.max(params.nlist);
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
                let mut picks = rand::seq::index::sample(&mut rng, n, m).into_vec();
                picks.sort_unstable();
                let mut sample = Vec::with_capacity(m * dim);
                for i in picks {
                    sample.extend_from_slice(entries.vector(i));
                }
                kmeans(&sample, dim, kparams, exec)?
            }
            _ => kmeans(entries.data(), dim, kparams, exec)?,
        };

        let assignment = assign_nearest(entries.data(), dim, &centroids, exec);
        let mut lists = vec![InvertedList::default(); params.nlist];
        for (i, (c, _)) in assignment.into_iter().enumerate() {
            let list = &mut lists[c as usize];
            list.ids.push(entries.ids()[i]);
            list.data.extend_from_slice(entries.vector(i));
        }
        Ok(IvfIndex {
            dim,
            centroids,
            lists,
        })
    }

    pub(crate) fn from_raw(dim: usize, centroids: Vec<f32>, lists: Vec<InvertedList>) -> Self {
        IvfIndex {
            dim,
            centroids,
            lists,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(InvertedList::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    /// Lists to visit for `q`: the `nprobe` centroids with the largest inner
    /// product, best first.
    pub fn probe_order(&self, q: &[f32], nprobe: usize) -> Vec<usize> {
        let mut top = TopK::new(nprobe);
        for (c, centroid) in self.centroids.chunks_exact(self.dim).enumerate() {
            top.push(c as u64, dot(q, centroid));
        }
        top.into_sorted().into_iter().map(|r| r.id as usize).collect()
    }

    /// Exact inner-product scoring inside the probed lists. With
    /// `nprobe == nlist` this equals flat search.
    pub fn search(&self, q: &[f32], topk: usize, nprobe: usize, exec: Exec) -> Result<Vec<SearchResult>> {
        check_query(q, self.dim, topk)?;
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(Error::Config(format!(
                "nprobe must be in 1..={}, got {nprobe}",
                self.nlist()
            )));
        }
        let probes = self.probe_order(q, nprobe);
        let partial = exec.map(&probes, |&c| {
            let list = &self.lists[c];
            scan(&list.ids, &list.data, self.dim, q, topk, Exec::Sequential)
        });
        let mut top = TopK::new(topk);
        for r in partial.into_iter().flatten() {
            top.push(r.id, r.score);
        }
        Ok(top.into_sorted())
    }
}
