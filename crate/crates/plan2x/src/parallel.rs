//! Data-parallel helpers with a sequential fallback.
//!
//! Everything that fans out here is embarrassingly parallel and owns its
//! randomness (per-run or per-head seeded streams), so results are
//! identical with and without the `parallel` feature and for any worker
//! count. Output order always matches input order.

/// Builds the global worker pool, honoring the `PLAN2X_THREADS` cap.
///
/// Safe to call more than once; only the first call takes effect.
/// A no-op without the `parallel` feature.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("PLAN2X_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    }
}

/// Maps `f` over `items`, in parallel when the feature is enabled.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

/// Sequential fallback for [`par_map`].
#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// Applies `f` to every element of `items`, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn par_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter_mut().for_each(f);
}

/// Sequential fallback for [`par_for_each_mut`].
#[cfg(not(feature = "parallel"))]
pub fn par_for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(&mut T) + Sync + Send,
{
    items.iter_mut().for_each(f);
}

/// Name of the active execution mode, used to label benchmark ids.
pub fn mode_name() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let xs: Vec<usize> = (0..100).collect();
        let ys = par_map(xs.clone(), |x| x * 2);
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn par_for_each_mut_touches_every_item() {
        let mut xs = vec![1i64; 64];
        par_for_each_mut(&mut xs, |x| *x += 1);
        assert!(xs.iter().all(|&x| x == 2));
    }
}
