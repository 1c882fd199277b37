//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the mapping runs on the rayon pool;
//! without it the same closure runs on the current thread. Results are
//! returned in index order either way, and callers reduce them in that
//! fixed order, so outputs are identical under both modes and under any
//! thread schedule.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    (0..n).map(f).collect()
}

/// Sequential reference path, kept callable regardless of features so the
/// bench suite can compare both under one build.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let par = map_indexed(100, |i| (i as f64).sqrt());
        let seq = map_indexed_seq(100, |i| (i as f64).sqrt());
        assert_eq!(par, seq);
    }
}
