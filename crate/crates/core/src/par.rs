//! Ordered data-parallel map. With the `parallel` feature the work fans
//! out over rayon's pool; results always come back in input order, so any
//! reduction the caller performs afterwards is deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel unless `sequential` is set or the
/// crate was built without the `parallel` feature.
pub fn map_ordered<T, R, F>(items: &[T], sequential: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !sequential {
        return items.par_iter().map(f).collect();
    }
    let _ = sequential;
    items.iter().map(f).collect()
}

/// True when this build can fan work out across threads.
pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
