//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (default) independent index ranges run on
//! the rayon pool; without it the same helpers degrade to plain sequential
//! iteration. Every call site maps **independent** items and collects them
//! in index order, so the output bytes are identical in both modes and for
//! any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order. Goes parallel
/// only for workloads past a fixed cutoff, where `grain_ops` approximates
/// the scalar operation count per call.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed_grained<R, F>(n: usize, grain_ops: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if grain_ops >= PARALLEL_CUTOFF_OPS {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed_grained<R, F>(n: usize, _grain_ops: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Below this many scalar ops the rayon dispatch overhead dominates.
#[cfg(feature = "parallel")]
const PARALLEL_CUTOFF_OPS: usize = 1 << 16;
