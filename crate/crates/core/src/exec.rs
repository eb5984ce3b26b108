//! Execution strategy for data-parallel stages.
//!
//! Core algorithms never spawn threads. Stages that can fan out (histogram
//! construction, bootstrap replicates, per-patch features) take an
//! [`Executor`]; results always come back indexed, so the reduction order
//! and therefore every output byte is independent of how the work ran.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(0..n)` and returns the results in index order.
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs everything on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
