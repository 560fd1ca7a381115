//! Replicate fan-out. With the `parallel` feature the work runs on the rayon
//! pool; without it, in index order on the calling thread. Results are always
//! returned in index order.

/// Runs `f(0..n)` sequentially.
pub fn map_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f(0..n)` on the rayon pool.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Default fan-out for replicate work.
pub fn map_replicates<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(n, f)
    }
}

/// Runs `body` with the replicate fan-out limited to `jobs` workers
/// (`jobs <= 1` runs sequentially in any build).
pub fn with_jobs<R, B>(jobs: usize, body: B) -> R
where
    R: Send,
    B: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                return pool.install(body);
            }
        } else if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            return pool.install(body);
        }
        body()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        body()
    }
}
