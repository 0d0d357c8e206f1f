//! Execution strategy for data-parallel loops (realizations, grids, lags).
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs on the rayon
//! global pool; without it every strategy degrades to a sequential loop.
//! Results are always collected in index order, so reductions over them are
//! independent of the schedule.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
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

/// `f(0), f(1), .., f(count - 1)` in index order.
pub fn map_indexed<T, F>(count: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}

/// Apply `f` to each item, preserving order.
pub fn map_slice<S, T, F>(items: &[S], exec: Execution, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), exec, |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(100, Execution::Sequential, |i| i * i);
        let par = map_indexed(100, Execution::Parallel, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
