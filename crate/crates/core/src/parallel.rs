//! Disorder-parallel execution.
//!
//! Each disorder index gets its own seed and its own substreams, so the
//! per-index results do not depend on how indices are spread over workers.
//! Results come back in index order and are reduced sequentially.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::disorder_seed;

/// Runs `f(index, disorder_seed)` for every index in `0..n` on the current
/// rayon pool and returns the results in index order.
pub fn map_seeds<T, F>(master: u64, n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(|i| f(i, disorder_seed(master, i))).collect()
}

/// Like [`map_seeds`] but short-circuits on the first error (in index order).
pub fn try_map_seeds<T, F>(master: u64, n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync + Send,
{
    map_seeds(master, n, f).into_iter().collect()
}

/// Runs `op` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, op: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(op))
}
