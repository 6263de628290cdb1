//! Data-parallel helpers that compile to plain iterators without the
//! `parallel` feature.
//!
//! Every helper preserves index order in its output, and reductions are
//! split into a fixed number of chunks independent of the thread count, so
//! results are bitwise identical with and without rayon.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of partial accumulators used by [`chunked_reduce`].
pub const REDUCE_CHUNKS: usize = 8;

/// `(0..n).map(f).collect()`, in parallel when enabled.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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

/// Maps over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Calls `f(chunk_index, chunk)` on consecutive disjoint chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Splits `0..n` into [`REDUCE_CHUNKS`] contiguous ranges, computes one
/// partial result per range with `partial`, then folds the partials in range
/// order with `merge`.
pub fn chunked_reduce<T, P, M>(n: usize, partial: P, mut merge: M) -> Option<T>
where
    T: Send,
    P: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    M: FnMut(&mut T, T),
{
    let ranges = split_ranges(n, REDUCE_CHUNKS);
    let mut parts = map_slice(&ranges, |r| partial(r.clone())).into_iter();
    let mut acc = parts.next()?;
    for p in parts {
        merge(&mut acc, p);
    }
    Some(acc)
}

/// Contiguous, near-equal, non-empty ranges covering `0..n`.
pub fn split_ranges(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, n.max(1));
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        if len > 0 {
            out.push(start..start + len);
        }
        start += len;
    }
    out
}

/// Elementwise `acc += other`.
pub fn add_assign(acc: &mut [f64], other: &[f64]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
