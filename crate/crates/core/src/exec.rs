//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) the loops below run on the rayon
//! thread pool; without it the same code runs sequentially. Every parallel
//! loop writes disjoint output chunks and keeps all reductions in a fixed
//! order, so the results are bit-identical to the sequential build.

/// Applies `f` to each element of an indexed mutable chunk iteration:
/// `data` is split into `chunk` sized pieces and `f(i, piece)` is called
/// for piece index `i`.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Fills each `chunk`-sized piece of `out` from the piece index, in parallel
/// when enabled.
pub(crate) fn fill_chunks<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    for_each_chunk_mut(out, chunk, f);
}

/// Maps piece indices `0..n` to owned results, preserving index order.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Iterates two buffers in lockstep chunks: piece `i` of `a` (size `ca`)
/// together with piece `i` of `b` (size `cb`).
pub(crate) fn for_each_chunk_pair_mut<T, U, F>(
    a: &mut [T],
    ca: usize,
    b: &mut [U],
    cb: usize,
    f: F,
) where
    T: Send,
    U: Send,
    F: Fn(usize, &mut [T], &mut [U]) + Send + Sync,
{
    debug_assert_eq!(a.len() / ca, b.len() / cb);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(ca)
            .zip(b.par_chunks_mut(cb))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.chunks_mut(ca)
            .zip(b.chunks_mut(cb))
            .enumerate()
            .for_each(|(i, (x, y))| f(i, x, y));
    }
}
