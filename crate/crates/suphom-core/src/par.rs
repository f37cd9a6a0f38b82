//! Data-parallel inner loops with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run as plain iterator loops. Float reductions are done by filling an
//! indexed buffer and folding sequentially afterwards, so results are
//! bit-identical for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this element count the per-cell loops run sequentially: thread
/// dispatch costs more than the arithmetic on desk-scale grids.
#[cfg(feature = "parallel")]
const FINE_GRAIN_MIN: usize = 1 << 13;

/// Collect `f(0), ..., f(len-1)` in index order. Coarse-grained: every item
/// is assumed to carry real work (a solve, a bisection), so this always
/// parallelizes when the feature is on.
pub fn map_collect<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Per-cell variant of [`map_collect`]: falls back to the plain loop below
/// the grain threshold.
pub fn map_collect_cells<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len >= FINE_GRAIN_MIN {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// In-place update of fixed-width chunks; `f(chunk_index, chunk)`.
/// Fine-grained (per-cell): sequential below the grain threshold.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert!(width > 0 && data.len().is_multiple_of(width));
    #[cfg(feature = "parallel")]
    {
        if data.len() >= FINE_GRAIN_MIN {
            data.par_chunks_mut(width)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let v = map_collect(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn chunk_update_sees_every_chunk() {
        let mut buf = vec![0.0f64; 12];
        for_each_chunk_mut(&mut buf, 3, |i, c| c.iter_mut().for_each(|x| *x = i as f64));
        assert_eq!(buf[11], 3.0);
        assert_eq!(buf[0], 0.0);
    }
}
