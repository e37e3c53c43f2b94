use alloc::vec::Vec;

/// Runs independent jobs, returning results in job-index order.
///
/// Branch training between merges goes through this trait so that a caller
/// with threads can fan out while results stay ordered by construction.
pub trait Executor: Sync {
    fn map<R, F>(&self, n: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync;

    /// Seconds since some fixed origin, when a clock is available.
    fn now_seconds(&self) -> Option<f64> {
        None
    }
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, n: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        (0..n).map(job).collect()
    }
}
