//! Data-parallel helpers. Hot loops dispatch through these so the crate
//! works identically with the `parallel` feature disabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`. Runs on the rayon pool when `parallel` is true and
/// the `parallel` feature is enabled; otherwise sequentially.
pub(crate) fn map_vec<T, U, F>(parallel: bool, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.into_par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}

/// Filter-map variant of [`map_vec`]. Output order matches input order.
pub(crate) fn filter_map_vec<T, U, F>(parallel: bool, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> Option<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.into_par_iter().filter_map(&f).collect();
        }
    }
    let _ = parallel;
    items.into_iter().filter_map(f).collect()
}

/// True when the default execution mode is parallel.
pub(crate) fn default_parallel() -> bool {
    cfg!(feature = "parallel")
}
