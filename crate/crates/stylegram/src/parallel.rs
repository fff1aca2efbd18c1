//! Data-parallel dispatch helpers.
//!
//! Hot loops run through these wrappers so the whole crate can be built
//! either with the default rayon thread pool (`parallel` feature) or as a
//! purely sequential library (`--no-default-features`). Both paths produce
//! bit-identical results: work is only ever split across disjoint output
//! chunks and every floating-point reduction happens in a fixed order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Jobs below roughly this many inner operations are not worth a
/// thread-pool round trip.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 512 * 1024;

/// Run `f(index, chunk)` over consecutive `chunk_len` slices of `data`.
///
/// `work_per_entry` estimates the inner operations behind one output
/// value; small jobs skip the pool. Chunks are disjoint, so parallel
/// execution cannot reorder any writes within one chunk; both paths are
/// bit-identical.
pub(crate) fn for_each_chunk_mut<F>(data: &mut [f64], chunk_len: usize, work_per_entry: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(chunk_len > 0 && data.len().is_multiple_of(chunk_len));
    #[cfg(feature = "parallel")]
    if data.len().saturating_mul(work_per_entry.max(1)) >= MIN_PARALLEL_WORK {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Map `0..n` through `f`, preserving index order in the output.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
