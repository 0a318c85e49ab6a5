//! Execution policy for the data-parallel loops.
//!
//! Every parallel path maps independent items and collects results in input
//! order, so the output never depends on the worker count. Without the
//! `parallel` feature [`Exec::Parallel`] silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this build can actually run work in parallel.
    pub const fn available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn is_parallel(self) -> bool {
        Self::available() && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f(chunk_index, chunk)` over fixed-size chunks of `data`.
    pub fn map_chunks<T, R, F>(self, data: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return data
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
        data.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
    }

    /// Runs `f` with at most one worker thread. Used by latency measurement.
    pub fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
                Ok(pool) => pool.install(f),
                Err(_) => f(),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }
}

/// Configures the global worker pool. A no-op without the `parallel` feature.
/// Returns false when the pool was already initialized.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let data: Vec<u64> = (0..10_000).collect();
        let a = Exec::Sequential.map(&data, |x| x * 3);
        let b = Exec::Parallel.map(&data, |x| x * 3);
        assert_eq!(a, b);
        let c = Exec::Parallel.map_chunks(&data, 97, |i, c| (i, c.iter().sum::<u64>()));
        let d = Exec::Sequential.map_chunks(&data, 97, |i, c| (i, c.iter().sum::<u64>()));
        assert_eq!(c, d);
        assert_eq!(Exec::single_threaded(|| 7), 7);
    }
}
