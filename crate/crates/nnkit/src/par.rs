//! Index-ordered parallel map with a sequential fallback.
//!
//! Results always come back in index order, so callers that reduce them
//! sequentially get bit-identical sums whichever mode ran.

/// Execution mode for data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled; falls back
    /// to sequential execution otherwise.
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Caps the global worker pool at `threads`. Only the first call in a
/// process can take effect; later calls return false.
pub fn limit_threads(threads: usize) -> bool {
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
        false
    }
}

pub fn map_range<T, F>(n: usize, mode: Parallelism, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Maps over contiguous chunks of `items` of size `chunk` (the last may be
/// shorter). Chunk boundaries depend only on `chunk`, never on the pool.
pub fn map_chunks<I, T, F>(items: &[I], chunk: usize, mode: Parallelism, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&[I]) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let n = items.len().div_ceil(chunk);
    map_range(n, mode, |c| {
        f(&items[c * chunk..((c + 1) * chunk).min(items.len())])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt();
        assert_eq!(
            map_range(100, Parallelism::Sequential, f),
            map_range(100, Parallelism::Parallel, f)
        );
    }

    #[test]
    fn chunks_cover_everything_in_order() {
        let items: Vec<usize> = (0..10).collect();
        let sums = map_chunks(&items, 4, Parallelism::Parallel, |c| {
            c.iter().sum::<usize>()
        });
        assert_eq!(sums, vec![6, 22, 17]);
    }
}
