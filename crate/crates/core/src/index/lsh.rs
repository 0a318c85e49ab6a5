use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::topk::TopK;
use super::{check_query, EntrySet, SearchResult};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::par::Exec;

const HAMMING_CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LshParams {
    pub bits: usize,
    pub seed: u64,
}

/// Random-hyperplane sign signatures with exact rescoring.
#[derive(Clone, Debug, PartialEq)]
pub struct LshIndex {
    dim: usize,
    bits: usize,
    hyperplanes: Vec<f32>,
    ids: Vec<u64>,
    data: Vec<f32>,
    signatures: Vec<u64>,
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl LshIndex {
    pub fn build(entries: EntrySet, params: LshParams) -> Result<Self> {
        if params.bits == 0 {
            return Err(Error::Config("LSH needs at least one bit".into()));
        }
        let dim = entries.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let hyperplanes: Vec<f32> = (0..params.bits * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let (ids, dim, data) = entries.into_parts();
        let mut idx = LshIndex {
            dim,
            bits: params.bits,
            hyperplanes,
            ids,
            data,
            signatures: Vec::new(),
        };
        idx.signatures = idx.data.chunks_exact(dim).flat_map(|v| idx.signature(v)).collect();
        Ok(idx)
    }

    pub(crate) fn from_raw(
        dim: usize,
        bits: usize,
        hyperplanes: Vec<f32>,
        ids: Vec<u64>,
        data: Vec<f32>,
        signatures: Vec<u64>,
    ) -> Self {
        LshIndex {
            dim,
            bits,
            hyperplanes,
            ids,
            data,
            signatures,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub(crate) fn hyperplanes(&self) -> &[f32] {
        &self.hyperplanes
    }

    pub(crate) fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub(crate) fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn signatures(&self) -> &[u64] {
        &self.signatures
    }

    /// Bit `b` is set when `<hyperplane_b, v> >= 0`.
    pub fn signature(&self, v: &[f32]) -> Vec<u64> {
        let mut sig = vec![0u64; words_for(self.bits)];
        for (b, h) in self.hyperplanes.chunks_exact(self.dim).enumerate() {
            if dot(h, v) >= 0.0 {
                sig[b / 64] |= 1 << (b % 64);
            }
        }
        sig
    }

    pub fn entry_signature(&self, i: usize) -> &[u64] {
        let w = words_for(self.bits);
        &self.signatures[i * w..(i + 1) * w]
    }

    /// Ranks entries by Hamming distance to the query signature (ties by
    /// id), rescores the first `rescore_c` exactly and returns the top-k.
    pub fn search(&self, q: &[f32], topk: usize, rescore_c: usize, exec: Exec) -> Result<Vec<SearchResult>> {
        check_query(q, self.dim, topk)?;
        if rescore_c < topk {
            return Err(Error::Config(format!(
                "rescore candidates ({rescore_c}) must be >= topk ({topk})"
            )));
        }
        let qs = self.signature(q);
        let w = qs.len();
        let distances: Vec<u32> = exec
            .map_chunks(&self.signatures, HAMMING_CHUNK * w, |_, sigs| {
                sigs.chunks_exact(w)
                    .map(|s| s.iter().zip(&qs).map(|(a, b)| (a ^ b).count_ones()).sum::<u32>())
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();

        let mut order: Vec<(u32, u64, usize)> = distances
            .into_iter()
            .enumerate()
            .map(|(i, d)| (d, self.ids[i], i))
            .collect();
        if rescore_c < order.len() {
            order.select_nth_unstable(rescore_c);
            order.truncate(rescore_c);
        }
        let mut top = TopK::new(topk);
        for (_, id, i) in order {
            top.push(id, dot(q, &self.data[i * self.dim..(i + 1) * self.dim]));
        }
        Ok(top.into_sorted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::FlatIndex;
    use rand::Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> EntrySet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EntrySet::new((0..n as u64).collect(), dim, data).unwrap()
    }

    #[test]
    fn indexed_vector_finds_itself() {
        let set = random_set(400, 16, 1);
        let idx = LshIndex::build(set.clone(), LshParams { bits: 32, seed: 3 }).unwrap();
        // pick the longest vector so no other row can out-score it
        let best = (0..400)
            .max_by(|&a, &b| dot(set.vector(a), set.vector(a)).total_cmp(&dot(set.vector(b), set.vector(b))))
            .unwrap();
        let q = set.vector(best);
        assert_eq!(idx.signature(q), idx.entry_signature(best));
        let r = idx.search(q, 1, 5, Exec::Sequential).unwrap();
        assert_eq!(r[0].id, best as u64);
    }

    #[test]
    fn one_bit_splits_into_two_buckets() {
        let set = random_set(200, 4, 2);
        let idx = LshIndex::build(set.clone(), LshParams { bits: 1, seed: 9 }).unwrap();
        for i in 0..200 {
            let side = dot(&idx.hyperplanes[..4], set.vector(i)) >= 0.0;
            assert_eq!(idx.entry_signature(i), &[side as u64]);
        }
    }

    #[test]
    fn full_rescore_equals_flat() {
        let set = random_set(300, 8, 3);
        let flat = FlatIndex::build(set.clone());
        let idx = LshIndex::build(set, LshParams { bits: 70, seed: 4 }).unwrap();
        let q = [0.5, -0.1, 0.2, 0.7, -0.3, 0.0, 0.4, -0.9];
        assert_eq!(
            idx.search(&q, 10, 300, Exec::Parallel).unwrap(),
            flat.search(&q, 10, Exec::Sequential).unwrap()
        );
    }

    #[test]
    fn sign_of_zero_is_one() {
        let set = EntrySet::new(vec![0], 3, vec![0.0, 0.0, 0.0]).unwrap();
        let idx = LshIndex::build(set, LshParams { bits: 5, seed: 0 }).unwrap();
        assert_eq!(idx.entry_signature(0), &[0b11111]);
    }

    #[test]
    fn argument_errors() {
        let set = random_set(10, 2, 5);
        assert!(LshIndex::build(set.clone(), LshParams { bits: 0, seed: 0 }).is_err());
        let idx = LshIndex::build(set, LshParams { bits: 8, seed: 0 }).unwrap();
        assert!(idx.search(&[1.0, 0.0], 5, 4, Exec::Sequential).is_err());
    }

    #[test]
    fn signature_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = rng.random::<u8>();
        assert_eq!(words_for(64), 1);
        assert_eq!(words_for(65), 2);
    }
}
