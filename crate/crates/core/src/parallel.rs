//! Optional data parallelism with a deterministic reduction contract.
//!
//! The thread count comes from the `MF_THREADS` environment variable, read
//! once per process; the default of 1 runs everything inline. Parallel maps
//! return results in input order, and callers reduce in that order, so the
//! numbers are bitwise identical at any thread count.

use std::sync::OnceLock;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

/// Thread budget from `MF_THREADS` (default 1; invalid values fall back
/// to 1).
pub fn max_threads() -> usize {
    std::env::var("MF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn pool() -> &'static Option<rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let n = max_threads();
        if n <= 1 {
            None
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .ok()
        }
    })
}

/// Applies `f` to every item, preserving input order in the output.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    match pool() {
        Some(p) => {
            use rayon::prelude::*;
            p.install(|| items.par_iter().map(&f).collect())
        }
        None => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let out = map_ordered(&items, |&i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
