//! Indexed map helpers shared by the data-parallel inner loops.
//!
//! Every parallel site in this crate maps an index range to independent
//! per-item results and reduces them sequentially afterwards, so output
//! bytes never depend on worker count or scheduling. With the `parallel`
//! feature disabled the same helpers compile to plain sequential loops.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime even when the `parallel` feature is
/// compiled in. Used by benches and equivalence tests to compare both paths
/// in one binary.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn sequential_forced() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `0..n` through `f`, results ordered by index.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential_forced() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`]; identical output by construction.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
