//! Threaded executor backed by a dedicated rayon pool.
//!
//! Results come back in index order regardless of scheduling, so any
//! aggregation downstream sees the same sequence for every worker count.

use anyhow::{Context, Result};
use bftok_core::exec::Executor;
use rayon::prelude::*;

/// Runs work items on a fixed-size rayon pool.
pub struct Pool {
    inner: rayon::ThreadPool,
}

impl Pool {
    /// Builds a pool with `workers` threads (0 means one per CPU).
    pub fn new(workers: usize) -> Result<Self> {
        let inner = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("failed to build worker pool")?;
        Ok(Self { inner })
    }
}

impl Executor for Pool {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        let f = &f;
        self.inner
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}
