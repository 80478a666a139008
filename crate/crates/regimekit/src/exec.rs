//! Thread-pool executor for the per-window jobs of the core pipeline.

use rayon::prelude::*;
use rayon::ThreadPool;
use regimekit_core::pipeline::{Executor, Serial};

/// Runs jobs on a dedicated rayon pool.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Parallel { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..jobs).into_par_iter().map(&f).collect())
    }
}

/// Serial for one thread (the canonical order), a pool otherwise.
pub enum Runner {
    Serial(Serial),
    Parallel(Parallel),
}

impl Runner {
    /// `None` uses every available core.
    pub fn new(threads: Option<usize>) -> Result<Self, rayon::ThreadPoolBuildError> {
        let n = threads.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        });
        if n <= 1 {
            Ok(Runner::Serial(Serial))
        } else {
            Parallel::new(n).map(Runner::Parallel)
        }
    }
}

impl Executor for Runner {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Runner::Serial(s) => s.run(jobs, f),
            Runner::Parallel(p) => p.run(jobs, f),
        }
    }
}
