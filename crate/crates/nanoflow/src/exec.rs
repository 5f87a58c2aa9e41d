//! Shared element-loop execution helper.
//!
//! Per-element work is a pure function of the element index; results are
//! collected in element order and reduced sequentially. This makes the
//! assembled output bitwise identical whether the map runs on the rayon
//! pool or on the calling thread, so the `parallel` feature and the
//! runtime `sequential` switch only affect wall time, never values.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every index in `0..n`, returning results in index order.
pub(crate) fn ordered_map<T, F>(n: usize, sequential: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !sequential {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = sequential;
    (0..n).map(f).collect()
}

/// Chunked variant: maps `f` over elements in fixed-size chunks, calling
/// `scatter` on each chunk's results in element order. Bounds peak memory
/// when the per-element output is large (element matrices).
pub(crate) fn chunked_map<T, F, S>(n: usize, chunk: usize, sequential: bool, f: F, mut scatter: S)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    S: FnMut(usize, T),
{
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let outputs: Vec<T>;
        #[cfg(feature = "parallel")]
        {
            outputs = if sequential {
                (start..end).map(&f).collect()
            } else {
                (start..end).into_par_iter().map(&f).collect()
            };
        }
        #[cfg(not(feature = "parallel"))]
        {
            outputs = (start..end).map(&f).collect();
        }
        for (offset, out) in outputs.into_iter().enumerate() {
            scatter(start + offset, out);
        }
        start = end;
    }
}
