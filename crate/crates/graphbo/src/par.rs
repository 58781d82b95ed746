//! Deterministic data-parallel helpers.
//!
//! The compute-heavy inner loops (mini-batch gradients, posterior scans,
//! Monte Carlo trials, per-seed runs) are data parallel. With the `parallel`
//! feature enabled they run on rayon; without it the same helpers degrade to
//! plain sequential loops. A process-wide switch ([`set_parallel`]) can force
//! the sequential path at runtime, which the benchmark suite uses to compare
//! both modes in one binary.
//!
//! Results are bitwise identical across modes and thread counts: mapped
//! results are collected in input order, and reductions fold fixed-size
//! chunks whose partial sums are merged sequentially in chunk order.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon paths at runtime; returns the previous value.
/// A no-op (always sequential) when the `parallel` feature is compiled out.
pub fn set_parallel(enabled: bool) -> bool {
    PARALLEL.swap(enabled, Ordering::SeqCst)
}

/// Whether parallel execution is currently active.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::SeqCst)
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if PARALLEL.load(Ordering::SeqCst) {
            return (0..n).into_par_iter().map(&f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in input order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if PARALLEL.load(Ordering::SeqCst) {
            return items.par_iter().map(&f).collect();
        }
    }
    items.iter().map(f).collect()
}

/// Chunk size used for deterministic folds. Fixed (not derived from the
/// thread count) so that the merge order is a pure function of the input.
pub const FOLD_CHUNK: usize = 64;

/// Fold `items` into an accumulator chunk-wise: each chunk of [`FOLD_CHUNK`]
/// items is folded sequentially into a fresh accumulator from `make`, and the
/// per-chunk partials are merged left-to-right in chunk order. The float
/// combination order is therefore independent of threading.
pub fn fold_chunks<T, P, M, F, G>(items: &[T], make: M, fold: F, merge: G) -> P
where
    T: Sync,
    P: Send,
    M: Fn() -> P + Sync,
    F: Fn(&mut P, &T) + Sync,
    G: Fn(&mut P, P),
{
    let partial = |chunk: &[T]| -> P {
        let mut acc = make();
        for item in chunk {
            fold(&mut acc, item);
        }
        acc
    };
    let partials: Vec<P>;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if PARALLEL.load(Ordering::SeqCst) {
            partials = items.par_chunks(FOLD_CHUNK).map(partial).collect();
        } else {
            partials = items.chunks(FOLD_CHUNK).map(partial).collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        partials = items.chunks(FOLD_CHUNK).map(partial).collect();
    }
    let mut out = make();
    for p in partials {
        merge(&mut out, p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_fold_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e3).collect();
        let run = || {
            fold_chunks(
                &xs,
                || 0.0f64,
                |acc, x| *acc += *x * *x,
                |acc, p| *acc += p,
            )
        };
        let was = set_parallel(true);
        let par = run();
        set_parallel(false);
        let seq = run();
        set_parallel(was);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }
}
