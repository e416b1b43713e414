//! Data-parallel helpers with a sequential fallback.
//!
//! All reductions preserve a fixed order so results are bit-identical with
//! and without the `parallel` feature.

/// Map `f` over `0..n`, writing into disjoint row slices of `out`.
///
/// `out.len()` must equal `n * row_len`. Each row is computed independently,
/// so the parallel and sequential paths produce identical bits.
pub fn map_rows<F>(out: &mut [f64], n: usize, row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(out.len(), n * row_len);
    map_rows_impl(out, n, row_len, f)
}

#[cfg(feature = "parallel")]
fn map_rows_impl<F>(out: &mut [f64], n: usize, row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    if n * row_len < PAR_THRESHOLD {
        return map_rows_seq(out, n, row_len, f);
    }
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(not(feature = "parallel"))]
fn map_rows_impl<F>(out: &mut [f64], n: usize, row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    map_rows_seq(out, n, row_len, f)
}

/// Sequential reference path; also used below the size threshold.
pub fn map_rows_seq<F>(out: &mut [f64], n: usize, row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert_eq!(out.len(), n * row_len);
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Map a fallible job over items, collecting results in input order.
pub fn map_collect<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Below this many output elements the rayon dispatch overhead dominates.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;
