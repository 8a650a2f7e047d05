//! Worker-thread budget.
//!
//! `PYRATTEN_THREADS` caps kernel parallelism; 0 (or 1) selects the
//! single-thread path. Kernels only parallelize over fully independent
//! output slices, so results are bitwise identical at every thread count.

use crate::tensor::Elem;
use std::sync::OnceLock;

static THREADS: OnceLock<usize> = OnceLock::new();

/// Effective worker thread count (>= 1).
pub(crate) fn threads() -> usize {
    *THREADS.get_or_init(|| {
        let requested = std::env::var("PYRATTEN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok());
        match requested {
            Some(0) | Some(1) => 1,
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    })
}

/// Splits `data` into `chunk`-sized pieces and runs `job(index, piece)` on
/// each, in parallel when the budget allows. Pieces are disjoint, so the
/// result does not depend on the thread count.
pub(crate) fn run_chunks<F>(data: &mut [Elem], chunk: usize, job: F)
where
    F: Fn(usize, &mut [Elem]) + Sync,
{
    if threads() <= 1 || data.len() <= chunk {
        for (i, piece) in data.chunks_mut(chunk).enumerate() {
            job(i, piece);
        }
    } else {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, piece)| job(i, piece));
    }
}
