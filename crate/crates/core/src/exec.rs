//! Parallelism seam.
//!
//! Rollout generation and evaluation fan out over independent work items;
//! the only requirement is that results come back indexed, so aggregation
//! happens in a fixed order no matter how the items were scheduled. The
//! core crate ships the serial executor; the CLI crate provides a threaded
//! one with the same contract.

use alloc::vec::Vec;

/// Maps `f` over `0..n`, returning results in index order.
pub trait Executor {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync;
}

/// Runs every item on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl Executor for Serial {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        (0..n).map(f).collect()
    }
}
