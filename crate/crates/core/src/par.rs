//! Order-preserving data-parallel maps.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it every call runs sequentially. Results are always collected in
//! input order, so output is identical under either mode.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch operation should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    Parallel,
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

pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`], passing the element index. The first error (lowest index)
/// is returned.
pub fn try_map_indexed<T, U, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<U, E> + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            // collect all, then report the lowest failing index for determinism
            let results: Vec<Result<U, E>> = items
                .par_iter()
                .enumerate()
                .map(|(i, t)| f(i, t))
                .collect();
            results.into_iter().collect()
        }
        _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}
