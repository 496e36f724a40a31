//! Training-free building blocks of an object-aware distillation pyramid:
//! a toy CLIP-style visual encoder with an appended object token and masked
//! attention, the three-level L1 distillation losses, calibrated
//! open-vocabulary classification, pseudo-label generation, and the
//! evaluation metrics behind them.
//!
//! Batch entry points run their per-item inner loops on rayon when the
//! `parallel` feature (default) is enabled; results are gathered in input
//! order, so outputs are identical to the sequential fallback.

// Index-style loops are deliberate in the numeric kernels: they pin the
// accumulation order the determinism guarantees rely on.
#![allow(clippy::needless_range_loop)]

pub mod classify;
pub mod compare;
pub mod distill;
pub mod encoder;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod pseudolabel;
pub mod synthetic;
pub mod tensor;

/// Order-preserving map over a slice, parallel when the `parallel` feature is
/// on. Items must be independent; output index i always corresponds to input
/// index i.
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential map with the same contract as [`par_map`]; kept unconditionally
/// for benchmarks and determinism comparisons.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
