//! Row-partitioned data parallelism.
//!
//! Work is split by output rows only, so every output element is produced by
//! exactly one task with a fixed summation order. Results are bitwise
//! identical for any thread count, and identical to the sequential path.
//! Without the `parallel` feature everything runs on the calling thread.

/// Below this many scalar multiply-adds a kernel stays on the calling thread.
pub const PAR_MIN_WORK: usize = 1 << 15;

/// Execution policy for kernels that offer both paths.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Parallel when the `parallel` feature is on and the work is large enough.
    #[default]
    Auto,
}

impl Exec {
    #[cfg(feature = "parallel")]
    #[inline]
    fn go_parallel(self, work: usize) -> bool {
        cfg!(feature = "parallel") && self == Exec::Auto && work >= PAR_MIN_WORK
    }
}

/// Calls `f(row_index, row)` for each `row_len`-sized chunk of `data`.
pub fn for_each_row<T, F>(exec: Exec, data: &mut [T], row_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.go_parallel(work) {
        use rayon::prelude::*;
        data.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = (exec, work);
    for (i, row) in data.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<R, F>(exec: Exec, n: usize, work: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.go_parallel(work) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = (exec, work);
    (0..n).map(f).collect()
}

/// Number of worker threads kernels may use.
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

/// Configures the global worker pool. `1` gives the deterministic
/// single-threaded mode. Returns false if the pool was already initialised
/// with a different size or the crate was built without `parallel`.
pub fn init_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        let n = n.max(1);
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok() {
            return true;
        }
        rayon::current_num_threads() == n
    }
    #[cfg(not(feature = "parallel"))]
    {
        n <= 1
    }
}
