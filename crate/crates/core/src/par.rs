//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan work out over rayon's pool;
//! without it (or inside [`sequential`]) they run on the calling thread.
//! Work is always split into index-addressed pieces whose results are
//! combined in index order, so results never depend on the thread count.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every helper in this module forced onto the current thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|c| c.set(prev));
    out
}

/// True when the helpers would dispatch to the thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Number of worker threads available to the helpers.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Sizes the global worker pool; returns false if it was already built or
/// the crate was compiled without the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn set_threads(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok()
}

#[cfg(not(feature = "parallel"))]
pub fn set_threads(_n: usize) -> bool {
    false
}

/// Calls `f(i, chunk)` for each `chunk_len`-sized piece of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && data.len() > chunk_len {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let s = sequential(|| map_indexed(10, |i| i));
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_flag_is_scoped() {
        sequential(|| assert!(!is_parallel()));
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
    }

    #[test]
    fn chunks_cover_everything() {
        let mut v = vec![0usize; 1000];
        for_each_chunk_mut(&mut v, 64, |i, c| {
            for (j, x) in c.iter_mut().enumerate() {
                *x = i * 64 + j;
            }
        });
        assert!(v.iter().enumerate().all(|(i, &x)| i == x));
    }
}
