//! Coarse quantizer for IVF: k-means++ seeding followed by Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::par::Exec;

/// Points handed to each parallel assignment task.
const ASSIGN_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KmeansParams {
    pub nlist: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KmeansParams {
    pub fn new(nlist: usize, seed: u64) -> Self {
        KmeansParams {
            nlist,
            max_iters: 20,
            seed,
        }
    }
}

/// Nearest centroid (squared Euclidean, lowest index on ties) and its
/// distance for every row of `data`.
pub fn assign_nearest(data: &[f32], dim: usize, centroids: &[f32], exec: Exec) -> Vec<(u32, f32)> {
    let parts = exec.map_chunks(data, ASSIGN_CHUNK * dim, |_, rows| {
        rows.chunks_exact(dim)
            .map(|x| nearest(x, centroids, dim))
            .collect::<Vec<_>>()
    });
    parts.into_iter().flatten().collect()
}

fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> (u32, f32) {
    let mut best = (0u32, f32::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

/// Sum of squared distances from each point to its nearest centroid.
pub fn inertia(data: &[f32], dim: usize, centroids: &[f32], exec: Exec) -> f64 {
    assign_nearest(data, dim, centroids, exec)
        .iter()
        .map(|&(_, d)| d as f64)
        .sum()
}

/// Returns `nlist x dim` centroids. Empty clusters are reseeded with the
/// point farthest from its assigned centroid. Deterministic for a seed and
/// independent of the execution policy.
pub fn kmeans(data: &[f32], dim: usize, params: KmeansParams, exec: Exec) -> Result<Vec<f32>> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::Config(format!("data length {} is not a multiple of dim {dim}", data.len())));
    }
    let n = data.len() / dim;
    let k = params.nlist;
    if k == 0 || k > n {
        return Err(Error::Config(format!("nlist must be in 1..={n}, got {k}")));
    }
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // k-means++ seeding
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids: Vec<f32> = point(first).to_vec();
    let mut d2: Vec<f32> = exec
        .map_chunks(data, ASSIGN_CHUNK * dim, |_, rows| {
            rows.chunks_exact(dim).map(|x| sq_dist(x, point(first))).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().map(|&d| d as f64).sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d as f64;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            chosen.iter().position(|c| !c).expect("k <= n leaves an unchosen point")
        };
        chosen[next] = true;
        let c = point(next).to_vec();
        let fresh: Vec<f32> = exec
            .map_chunks(data, ASSIGN_CHUNK * dim, |_, rows| {
                rows.chunks_exact(dim).map(|x| sq_dist(x, &c)).collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        for (d, f) in d2.iter_mut().zip(fresh) {
            *d = d.min(f);
        }
        centroids.extend_from_slice(&c);
    }

    // Lloyd iterations
    let mut assignment = vec![u32::MAX; n];
    for iter in 0..params.max_iters {
        let nearest = assign_nearest(data, dim, &centroids, exec);
        let changed = nearest
            .iter()
            .zip(&assignment)
            .filter(|((c, _), old)| c != *old)
            .count();
        if changed == 0 {
            log::debug!("k-means converged after {iter} iterations");
            break;
        }
        for (a, (c, _)) in assignment.iter_mut().zip(&nearest) {
            *a = *c;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c as usize] += 1;
            for (s, &x) in sums[c as usize * dim..(c as usize + 1) * dim].iter_mut().zip(point(i)) {
                *s += x as f64;
            }
        }

        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut by_distance: Vec<usize> = (0..n).collect();
            // farthest first, lowest index on ties
            by_distance.sort_by(|&a, &b| nearest[b].1.total_cmp(&nearest[a].1).then(a.cmp(&b)));
            let mut donors = by_distance.into_iter();
            for c in empties {
                let Some(p) = donors.by_ref().find(|&p| counts[assignment[p] as usize] > 1) else {
                    break;
                };
                let old = assignment[p] as usize;
                counts[old] -= 1;
                for (s, &x) in sums[old * dim..(old + 1) * dim].iter_mut().zip(point(p)) {
                    *s -= x as f64;
                }
                counts[c] = 1;
                for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(p)) {
                    *s = x as f64;
                }
                assignment[p] = c as u32;
            }
        }

        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = (*s * inv) as f32;
            }
        }
    }
    Ok(centroids)
}
