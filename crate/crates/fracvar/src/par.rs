//! Data-parallel map helper with a sequential fallback.
//!
//! Operator evaluation and matrix assembly are embarrassingly parallel over
//! nodes or rows. With the `parallel` feature the map runs on rayon; without
//! it the same closure runs sequentially. Results are collected in index
//! order either way, and reductions over the collected values stay
//! sequential, so outputs are byte-identical across thread counts.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
