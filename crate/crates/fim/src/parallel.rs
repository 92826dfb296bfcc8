//! Data-parallel helpers with a sequential fallback.
//!
//! Everything hot in this crate (Monte Carlo trials, batch gradients,
//! coherence scans) is an embarrassingly parallel map over an index range.
//! With the `parallel` feature (default) these run on the rayon pool;
//! without it they run sequentially. Results are always collected in index
//! order, so aggregate statistics do not depend on the execution schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
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

/// Map `f` over the items of a slice, collecting in order.
pub fn par_map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// True when the crate was built with the rayon-backed parallel path.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
