use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::SearchResult;

/// Ranking key: higher score is better, then lower id.
#[derive(Clone, Copy, Debug)]
struct Ranked(SearchResult);

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .score
            .total_cmp(&other.0.score)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

/// Bounded collector for the best `k` results under the ranking rule.
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked>>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: u64, score: f32) {
        if self.k == 0 {
            return;
        }
        let cand = Ranked(SearchResult { id, score });
        if self.heap.len() < self.k {
            self.heap.push(Reverse(cand));
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if cand > worst.0 {
                *worst = Reverse(cand);
            }
        }
    }

    pub fn merge(&mut self, other: TopK) {
        for Reverse(Ranked(r)) in other.heap {
            self.push(r.id, r.score);
        }
    }

    /// Results best first.
    pub fn into_sorted(self) -> Vec<SearchResult> {
        // ascending Reverse = descending rank
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|Reverse(Ranked(r))| r)
            .collect()
    }
}

/// Sorts results best first under the ranking rule.
pub fn sort_results(results: &mut [SearchResult]) {
    results.sort_by(|a, b| Ranked(*b).cmp(&Ranked(*a)));
}
