//! Order-preserving fan-out over independent work items.
//!
//! With the `parallel` feature (default) work is dispatched on a bounded
//! rayon pool. Without it, or with a parallelism of 1, every map runs
//! sequentially on the calling thread. Both paths return results in input
//! order, so callers never observe scheduling.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Shared handle to the worker pool. Cloning is cheap.
#[derive(Clone)]
pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
    parallelism: usize,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("parallelism", &self.parallelism)
            .finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            #[cfg(feature = "parallel")]
            pool: None,
            parallelism: 1,
        }
    }

    /// Build an executor with at most `parallelism` worker threads.
    ///
    /// Falls back to sequential execution when `parallelism <= 1` or when the
    /// crate is built without the `parallel` feature.
    pub fn new(parallelism: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            if parallelism > 1 {
                match rayon::ThreadPoolBuilder::new()
                    .num_threads(parallelism)
                    .thread_name(|i| format!("gaterag-worker-{i}"))
                    .build()
                {
                    Ok(pool) => {
                        return Self {
                            pool: Some(Arc::new(pool)),
                            parallelism,
                        }
                    }
                    Err(err) => {
                        log::warn!("failed to build worker pool ({err}); running sequentially")
                    }
                }
            }
        }
        let _ = parallelism;
        Self::sequential()
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn is_parallel(&self) -> bool {
        self.parallelism > 1
    }

    /// Apply `f` to every item, preserving input order in the output.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Like [`Executor::map`] but also passes the item index.
    pub fn map_indexed<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Run two closures, concurrently when a pool is available.
    pub fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| rayon::join(a, b));
        }
        (a(), b())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..500).collect();
        for exec in [Executor::sequential(), Executor::new(4)] {
            let out = exec.map(&items, |x| x * 3);
            assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
        }
    }

    #[test]
    fn map_indexed_matches_positions() {
        let items = vec!["a", "b", "c"];
        let out = Executor::new(3).map_indexed(&items, |i, s| format!("{i}{s}"));
        assert_eq!(out, vec!["0a", "1b", "2c"]);
    }

    #[test]
    fn empty_input() {
        let items: Vec<u8> = vec![];
        assert!(Executor::new(2).map(&items, |x| *x).is_empty());
    }

    #[test]
    fn join_returns_both() {
        let (a, b) = Executor::new(2).join(|| 1, || "two");
        assert_eq!((a, b), (1, "two"));
    }
}
