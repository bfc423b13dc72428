// Copyright (c) 2026 The realmsim Authors.
// SPDX-License-Identifier: Apache-2.0

//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan out over rayon's global
//! pool. Without it they degrade to ordinary iterators. Results are always
//! returned in input order, so callers stay deterministic either way.

/// True when the crate was built with the rayon backend.
#[cfg(feature = "parallel")]
pub fn is_parallel_available() -> bool {
    true
}

/// True when the crate was built with the rayon backend.
#[cfg(not(feature = "parallel"))]
pub fn is_parallel_available() -> bool {
    false
}

/// Map over a slice.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(data: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    data.par_iter().map(f).collect()
}

/// Map over a slice.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(data: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    data.iter().map(f).collect()
}

/// Map over `0..count`.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

/// Map over `0..count`.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

/// Sequential map over `0..count`, regardless of features. Used as the
/// comparison baseline in benchmarks.
pub fn map_indexed_sequential<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

/// Count the indices in `0..count` for which `f` holds.
#[cfg(feature = "parallel")]
pub fn count_indexed<F>(count: usize, f: F) -> usize
where
    F: Fn(usize) -> bool + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().filter(|&i| f(i)).count()
}

/// Count the indices in `0..count` for which `f` holds.
#[cfg(not(feature = "parallel"))]
pub fn count_indexed<F>(count: usize, f: F) -> usize
where
    F: Fn(usize) -> bool,
{
    (0..count).filter(|&i| f(i)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v: Vec<u32> = (0..1000).collect();
        let out = map(&v, |x| x * 2);
        assert_eq!(out, (0..1000).map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_indexed(10, |i| i), map_indexed_sequential(10, |i| i));
    }

    #[test]
    fn count_matches_filter() {
        assert_eq!(count_indexed(100, |i| i % 3 == 0), 34);
    }
}
