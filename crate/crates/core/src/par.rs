//! Per-item data parallelism with an order-preserving map.
//!
//! With the `parallel` feature the work runs on a rayon pool; without it
//! every request degrades to a plain sequential loop. Results always come
//! back in input order, so callers reduce them deterministically.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Name of the environment variable the CLI reads for a default worker count.
pub const WORKERS_ENV: &str = "EMODIST_WORKERS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parallelism {
    Sequential,
    Threads(usize),
    /// One worker per available core.
    #[default]
    Auto,
}

impl Parallelism {
    /// `0` means auto, `1` sequential, anything else a fixed pool.
    pub fn from_workers(n: usize) -> Self {
        match n {
            0 => Parallelism::Auto,
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        }
    }
}

pub struct Executor {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
    parallelism: Parallelism,
}

impl Executor {
    pub fn new(parallelism: Parallelism) -> Result<Self> {
        #[cfg(feature = "parallel")]
        {
            let pool = match parallelism {
                Parallelism::Sequential => None,
                Parallelism::Threads(n) => Some(build_pool(n)?),
                Parallelism::Auto => Some(build_pool(0)?),
            };
            Ok(Self { pool, parallelism })
        }
        #[cfg(not(feature = "parallel"))]
        {
            if parallelism != Parallelism::Sequential {
                log::debug!("built without the parallel feature; running sequentially");
            }
            Ok(Self { parallelism })
        }
    }

    pub fn sequential() -> Self {
        Self {
            #[cfg(feature = "parallel")]
            pool: None,
            parallelism: Parallelism::Sequential,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        self.parallelism
    }

    pub fn workers(&self) -> usize {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.current_num_threads();
        }
        1
    }

    /// Applies `f` to every item, returning results in input order.
    pub fn map<T, U, F>(&self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Like [`Executor::map`] over the index range `0..n`.
    pub fn map_range<U, F>(&self, range: std::ops::Range<usize>, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| range.into_par_iter().map(&f).collect());
        }
        range.map(f).collect()
    }
}

#[cfg(feature = "parallel")]
fn build_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| crate::error::Error::Config(format!("cannot start worker pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..1000).collect();
        for p in [Parallelism::Sequential, Parallelism::Threads(4), Parallelism::Auto] {
            let ex = Executor::new(p).unwrap();
            let out = ex.map(&items, |x| x * x);
            assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
            assert_eq!(ex.map_range(0..10, |i| i), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn worker_counts() {
        assert_eq!(Parallelism::from_workers(0), Parallelism::Auto);
        assert_eq!(Parallelism::from_workers(1), Parallelism::Sequential);
        assert_eq!(Parallelism::from_workers(8), Parallelism::Threads(8));
        assert_eq!(Executor::sequential().workers(), 1);
    }
}
