//! Worker-count control. Results never depend on the worker count: every
//! parallel map collects in index order and reductions are done serially.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f` on a pool with `workers` threads (`0` means the rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::solver("parallel", e.to_string()))?;
    Ok(pool.install(f))
}

/// Ordered parallel map over `0..n`.
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Ordered parallel map over `0..n` with early error.
pub fn try_map_indexed<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}
