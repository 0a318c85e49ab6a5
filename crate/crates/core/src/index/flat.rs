use super::topk::TopK;
use super::{check_query, EntrySet, SearchResult};
use crate::error::Result;
use crate::linalg::dot;
use crate::par::Exec;

/// Rows scanned per parallel task.
const SCAN_CHUNK: usize = 4096;

/// Brute-force index: every query is scored against every row.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    ids: Vec<u64>,
    dim: usize,
    data: Vec<f32>,
}

impl FlatIndex {
    pub fn build(entries: EntrySet) -> Self {
        let (ids, dim, data) = entries.into_parts();
        FlatIndex { ids, dim, data }
    }

    pub(crate) fn from_raw(ids: Vec<u64>, dim: usize, data: Vec<f32>) -> Self {
        FlatIndex { ids, dim, data }
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

    /// Exact top-`min(topk, N)` by inner product.
    pub fn search(&self, q: &[f32], topk: usize, exec: Exec) -> Result<Vec<SearchResult>> {
        check_query(q, self.dim, topk)?;
        Ok(scan(&self.ids, &self.data, self.dim, q, topk, exec))
    }
}

/// Scores `q` against every row of `data` and keeps the best `topk`.
pub(crate) fn scan(
    ids: &[u64],
    data: &[f32],
    dim: usize,
    q: &[f32],
    topk: usize,
    exec: Exec,
) -> Vec<SearchResult> {
    let partial = exec.map_chunks(data, SCAN_CHUNK * dim, |chunk_idx, rows| {
        let base = chunk_idx * SCAN_CHUNK;
        let mut top = TopK::new(topk);
        for (i, v) in rows.chunks_exact(dim).enumerate() {
            top.push(ids[base + i], dot(q, v));
        }
        top
    });
    let mut top = TopK::new(topk);
    for p in partial {
        top.merge(p);
    }
    top.into_sorted()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::IndexEntry;

    fn index(entries: Vec<(u64, Vec<f32>)>) -> FlatIndex {
        FlatIndex::build(
            EntrySet::from_entries(entries.into_iter().map(|(id, vector)| IndexEntry { id, vector }).collect())
                .unwrap(),
        )
    }

    #[test]
    fn argmax_by_hand() {
        let idx = index(vec![(0, vec![2.0, 0.0]), (1, vec![0.0, 3.0])]);
        let r = idx.search(&[1.0, 0.0], 1, Exec::Sequential).unwrap();
        assert_eq!(r, vec![SearchResult { id: 0, score: 2.0 }]);
    }

    #[test]
    fn topk_larger_than_index() {
        let idx = index(vec![(0, vec![1.0]), (1, vec![2.0]), (2, vec![3.0])]);
        let r = idx.search(&[1.0], 10, Exec::Parallel).unwrap();
        assert_eq!(r.iter().map(|r| r.id).collect::<Vec<_>>(), vec![2, 1, 0]);
    }

    #[test]
    fn equal_scores_lower_id_first() {
        let idx = index(vec![(7, vec![1.0, 1.0]), (2, vec![1.0, 1.0]), (5, vec![2.0, 0.0])]);
        let r = idx.search(&[1.0, 1.0], 3, Exec::Sequential).unwrap();
        assert_eq!(r.iter().map(|r| r.id).collect::<Vec<_>>(), vec![2, 5, 7]);
    }

    #[test]
    fn bad_queries() {
        let idx = index(vec![(0, vec![1.0, 0.0])]);
        assert!(idx.search(&[1.0], 1, Exec::Sequential).is_err());
        assert!(idx.search(&[1.0, 0.0], 0, Exec::Sequential).is_err());
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let rows: Vec<(u64, Vec<f32>)> = (0..50).map(|i| (i, vec![(i % 7) as f32, (i % 3) as f32])).collect();
        let mut rev = rows.clone();
        rev.reverse();
        let (a, b) = (index(rows), index(rev));
        let q = [0.3, 1.0];
        assert_eq!(a.search(&q, 20, Exec::Parallel).unwrap(), b.search(&q, 20, Exec::Sequential).unwrap());
    }
}
