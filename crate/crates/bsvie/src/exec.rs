//! Chunked execution over path batches.
//!
//! Work over `m` Monte Carlo paths is split into fixed-size chunks and the
//! per-chunk results are reduced in chunk order. Chunk boundaries depend only
//! on `m`, never on the thread count, so results are bitwise identical for
//! any parallelism level — and identical to the sequential fallback built
//! without the `parallel` feature.

/// Paths per work unit. Fixed: changing it changes summation order.
pub const PATHS_PER_CHUNK: usize = 64;

/// How to run the per-chunk closures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// One chunk after another on the calling thread.
    Sequential,
    /// Chunks distributed over the rayon pool (requires the `parallel`
    /// feature; falls back to sequential otherwise).
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Pin the global worker pool size. No effect without the `parallel`
/// feature; chunk results do not depend on the pool size either way.
pub fn set_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// Split `0..m` into `PATHS_PER_CHUNK`-sized ranges (last may be short).
pub fn chunk_ranges(m: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::with_capacity(m.div_ceil(PATHS_PER_CHUNK));
    let mut start = 0;
    while start < m {
        let end = (start + PATHS_PER_CHUNK).min(m);
        out.push(start..end);
        start = end;
    }
    out
}

/// Apply `f` to every chunk of `0..m`, returning results in chunk order.
pub fn map_chunks<T, F>(mode: ExecMode, m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(m);
    match mode {
        ExecMode::Sequential => ranges.into_iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                ranges.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                ranges.into_iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_exactly_once() {
        for m in [1, 63, 64, 65, 1000] {
            let ranges = chunk_ranges(m);
            let mut next = 0;
            for r in &ranges {
                assert_eq!(r.start, next);
                next = r.end;
            }
            assert_eq!(next, m);
        }
    }

    #[test]
    fn parallel_and_sequential_reduce_identically() {
        let f = |r: std::ops::Range<usize>| -> f64 {
            r.map(|i| ((i as f64) * 0.37).sin()).sum()
        };
        let seq: f64 = map_chunks(ExecMode::Sequential, 777, f).iter().sum();
        let par: f64 = map_chunks(ExecMode::Parallel, 777, f).iter().sum();
        assert_eq!(seq.to_bits(), par.to_bits());
    }
}
