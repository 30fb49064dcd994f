//! Deterministic data-parallel reductions.
//!
//! Work is split into at most [`BLOCKS`] contiguous blocks whose boundaries
//! depend only on the input length, and block results come back in input
//! order. Sums therefore do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{NphError, Result};

pub(crate) const BLOCKS: usize = 64;

/// Caps the global worker pool at `threads`; must run before any parallel work.
pub fn set_thread_count(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| NphError::InvalidInput(format!("thread pool: {e}")))
}

/// Applies `f(offset, block)` to each block and returns results in order.
pub(crate) fn map_blocks<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let size = items.len().div_ceil(BLOCKS.min(items.len()));
    items.par_chunks(size).enumerate().map(|(b, chunk)| f(b * size, chunk)).collect()
}
