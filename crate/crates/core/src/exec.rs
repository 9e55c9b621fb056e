//! Row-parallel helpers. With the `parallel` feature disabled every
//! [`Exec`] runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Calls `f(k, chunk)` for consecutive chunks of `chunk_len` elements.
pub(crate) fn for_each_chunk<T, F>(exec: Exec, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(k, c)| f(k, c));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk_len).enumerate().for_each(|(k, c)| f(k, c));
}

/// `(0..n).map(f).collect()`, in input order regardless of `exec`.
pub(crate) fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Deterministic sum: per-index partials are combined in index order.
pub(crate) fn sum_range<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(exec, n, f).into_iter().sum()
}

pub(crate) fn max_range<F>(exec: Exec, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    map_range(exec, n, f).into_iter().fold(f64::NEG_INFINITY, f64::max)
}
