use std::time::Instant;

use forkmerge_core::forkmerge::Executor;
use rayon::prelude::*;

/// Runs branch jobs on a dedicated rayon pool; results keep index order.
pub struct ThreadPool {
    pool: rayon::ThreadPool,
    started: Instant,
}

impl ThreadPool {
    /// `threads = 0` uses one thread per core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(ThreadPool {
            pool,
            started: Instant::now(),
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for ThreadPool {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, job: F) -> Vec<R> {
        self.pool.install(|| (0..n).into_par_iter().map(&job).collect())
    }

    fn now_seconds(&self) -> Option<f64> {
        Some(self.started.elapsed().as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_index_order() {
        let pool = ThreadPool::new(4).unwrap();
        assert_eq!(pool.threads(), 4);
        let out = pool.map(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
