//! Pointwise loops that run on rayon with the `parallel` feature and
//! sequentially otherwise. Results never depend on the schedule.

use crate::error::Result;

/// Calls `f(i, chunk)` for every `stride`-sized chunk of `out`.
pub(crate) fn try_for_each_chunk<F>(out: &mut [f64], stride: usize, f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(stride).enumerate().try_for_each(|(i, c)| f(i, c))
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(stride).enumerate().try_for_each(|(i, c)| f(i, c))
    }
}

/// `[f(0), …, f(n−1)]`, stopping at the first error in index order.
pub(crate) fn try_map<T, F>(n: usize, f: F) -> Result<alloc::vec::Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
