//! Data-parallel helpers with a sequential fallback.
//!
//! Batch work (independent runs, frontier expansion, schedule search) goes
//! through these functions. With the `parallel` feature enabled (the
//! default) and `parallel = true` they fan out on the rayon pool;
//! otherwise they run sequentially. Output order always matches input
//! order, so results are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when requested and compiled in.
pub fn map_vec<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// First item (by input order) for which `f` returns `Some`.
pub fn find_first_map<T, R, F>(items: &[T], parallel: bool, f: F) -> Option<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Option<R> + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().find_map_first(&f);
    }
    let _ = parallel;
    items.iter().find_map(f)
}
