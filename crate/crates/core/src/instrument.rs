//! Per-thread counters used to check the output-sensitivity contract.
//!
//! Counters are bumped on the calling thread at API entry points, so a test
//! can reset them, run a query, and read back exactly what that query cost
//! even while other tests run concurrently.

use std::cell::Cell;

thread_local! {
    static POINT_EVALS: Cell<u64> = const { Cell::new(0) };
    static GRID_ALLOCS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the counters for the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Query points at which a posterior field (mean, variance, sample) was evaluated.
    pub point_evals: u64,
    /// Volumetric grids allocated (`ScalarFieldGrid` constructions).
    pub grid_allocs: u64,
}

pub fn reset() {
    POINT_EVALS.with(|c| c.set(0));
    GRID_ALLOCS.with(|c| c.set(0));
}

pub fn snapshot() -> Counters {
    Counters {
        point_evals: POINT_EVALS.with(Cell::get),
        grid_allocs: GRID_ALLOCS.with(Cell::get),
    }
}

pub(crate) fn record_point_evals(n: usize) {
    POINT_EVALS.with(|c| c.set(c.get() + n as u64));
}

pub(crate) fn record_grid_alloc() {
    GRID_ALLOCS.with(|c| c.set(c.get() + 1));
}
