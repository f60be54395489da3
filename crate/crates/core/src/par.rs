//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (default) these fan out over rayon's global
//! pool; without it they run the same closures sequentially. Every helper
//! hands each closure a disjoint output slot and collects results in index
//! order, so numerical results never depend on the thread count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(row_index, row)` over every `cols`-wide row of `data`.
pub fn for_each_row_mut<F>(data: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Runs `f(first_row, rows)` over consecutive blocks of `rows_per_block`
/// rows, letting the closure keep per-block scratch space.
pub fn for_each_row_block_mut<F>(data: &mut [f64], cols: usize, rows_per_block: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    let width = cols * rows_per_block.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(b, block)| f(b * rows_per_block.max(1), block));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(b, block)| f(b * rows_per_block.max(1), block));
}

/// Evaluates `f` on `0..n` and returns the results in index order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Splits `0..n` into consecutive ranges of `chunk` items (the last may be
/// shorter). The split depends only on `n` and `chunk`.
pub fn fixed_chunks(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Maps `f` over fixed-size chunks of `0..n`; results are in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = fixed_chunks(n, chunk);
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Number of worker threads the helpers will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        let r = fixed_chunks(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(fixed_chunks(0, 4).is_empty());
    }

    #[test]
    fn rows_visited_in_place() {
        let mut data = vec![0.0; 12];
        for_each_row_mut(&mut data, 3, |i, row| row.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(data[9..], [3.0, 3.0, 3.0]);
        let out = map_indices(5, |i| i * i);
        assert_eq!(out, vec![0, 1, 4, 9, 16]);
    }
}
