//! Execution strategy for the data-parallel loops in this crate.
//!
//! With the `parallel` feature the work is spread over rayon; without it every
//! strategy degrades to a plain sequential map. Output order always equals
//! input order.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Global rayon pool.
    #[default]
    Parallel,
    /// Dedicated pool with at most `n` workers.
    Bounded(usize),
}

impl Execution {
    pub fn with_parallelism(n: usize) -> Self {
        match n {
            0 => Execution::Parallel,
            1 => Execution::Sequential,
            n => Execution::Bounded(n),
        }
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => items.par_iter().map(f).collect(),
            Execution::Bounded(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(_) => items.iter().map(f).collect(),
            },
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        items.iter().map(f).collect()
    }
}
