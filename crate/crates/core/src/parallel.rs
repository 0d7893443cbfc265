//! Thread-count control and deterministic row-parallel helpers.

use rayon::prelude::*;

pub const THREADS_ENV: &str = "SNAPFLOW_THREADS";

/// Rows below this count are processed serially.
const PAR_MIN_ROWS: usize = 64;

/// Caps the global rayon pool at `SNAPFLOW_THREADS` when set. Call once, early.
/// Returns the configured thread count, if any.
pub fn configure_from_env() -> Option<usize> {
    let n = std::env::var(THREADS_ENV).ok()?.trim().parse::<usize>().ok()?;
    let n = n.max(1);
    // a pool may already exist (tests, embedding applications); that's fine
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Some(n)
}

/// Applies `f` to each row index and collects in order. Every output depends on its
/// own row only, so the result does not depend on the thread count.
pub(crate) fn map_rows<T, F>(rows: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if rows < PAR_MIN_ROWS {
        (0..rows).map(f).collect()
    } else {
        (0..rows).into_par_iter().map(f).collect()
    }
}
