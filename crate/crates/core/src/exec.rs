//! Parallel or sequential execution of independent per-item work.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] runs on
//! rayon; without it every mode falls back to a plain iterator. Results are
//! always returned in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Global rayon pool.
    Parallel,
    /// Dedicated pool with at most this many workers; used for network
    /// fan-out where the bound is a rate limit, not a CPU count.
    Bounded(usize),
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Execution::Sequential | Execution::Bounded(0 | 1))
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        {
            match self {
                Execution::Parallel => return items.par_iter().map(f).collect(),
                Execution::Bounded(n) if n > 1 => {
                    if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                        return pool.install(|| items.par_iter().map(&f).collect());
                    }
                }
                _ => {}
            }
        }
        items.iter().map(f).collect()
    }

    /// Like [`Execution::map`] but stops at the first error (in input order
    /// for the sequential path; any error for the parallel path).
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}
