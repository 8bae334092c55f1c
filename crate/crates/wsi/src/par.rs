//! Rayon-backed [`BatchMap`].

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use wsi_core::par::BatchMap;

/// Environment variable capping worker threads; `0` or unset means one per core.
pub const THREADS_ENV: &str = "WSI_THREADS";

pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        Parallel { pool }
    }

    /// Pool sized from `WSI_THREADS`.
    pub fn from_env() -> Self {
        let n = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0);
        Parallel::new(n)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchMap for Parallel {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync + Send,
    {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }
}
