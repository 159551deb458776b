//! Deterministic data-parallel execution over batch samples.
//!
//! Work is split into fixed-size chunks; each chunk is mapped independently
//! (in parallel when the `parallel` feature is enabled) and the per-chunk
//! results are folded sequentially in chunk order. Because chunk boundaries
//! do not depend on the thread count, the reduction order — and therefore
//! every floating-point sum — is identical for sequential and parallel
//! execution.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per work unit. Small enough to load-balance a typical batch over
/// a handful of cores, large enough to amortize per-chunk buffers.
pub const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Uses the rayon pool when compiled with the `parallel` feature;
    /// otherwise falls back to sequential execution.
    #[default]
    Parallel,
}

/// Maps `f` over fixed-size chunks of `0..len` and returns the per-chunk
/// results in chunk order. `f` receives each chunk as a range.
pub fn map_chunks<R, F>(len: usize, mode: ExecMode, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(len))
        .collect();
    match mode {
        ExecMode::Sequential => ranges.into_iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                ranges.into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                ranges.into_iter().map(f).collect()
            }
        }
    }
}
