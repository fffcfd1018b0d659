//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) batch work runs on rayon;
//! without it, or when [`Execution::Sequential`] is requested, the same
//! closures run on the calling thread. Results are always returned in
//! input order, so output never depends on the execution mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Parallel over a pool of `workers` threads; `None` uses the global pool.
    Parallel {
        workers: Option<usize>,
    },
    #[default]
    Auto,
}

impl Execution {
    pub fn with_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => Execution::Sequential,
            Some(n) => Execution::Parallel { workers: Some(n) },
            None => Execution::Auto,
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Execution::Sequential)
    }
}

/// Map `f` over `0..len`, returning results in index order.
pub fn map_indices<T, F>(len: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        match exec {
            Execution::Sequential => {}
            Execution::Auto | Execution::Parallel { workers: None } => {
                return (0..len).into_par_iter().map(f).collect();
            }
            Execution::Parallel { workers: Some(n) } => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    return pool.install(|| (0..len).into_par_iter().map(f).collect());
                }
            }
        }
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Map `f` over a slice, returning results in slice order.
pub fn map_slice<S, T, F>(items: &[S], exec: Execution, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indices(items.len(), exec, |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_every_mode() {
        let seq = map_indices(257, Execution::Sequential, |i| i * i);
        let auto = map_indices(257, Execution::Auto, |i| i * i);
        let four = map_indices(257, Execution::Parallel { workers: Some(4) }, |i| i * i);
        assert_eq!(seq, auto);
        assert_eq!(seq, four);
    }
}
