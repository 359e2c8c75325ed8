//! Fixed workloads shared by the benchmarks.

use apcrw::{ApcrwParams, FiniteRangeParams, WalkParams};

pub fn model() -> ApcrwParams {
    ApcrwParams::new(1.0, 0.5, 0.6).unwrap()
}

pub fn walk() -> WalkParams {
    WalkParams::new(0.8, 0.3).unwrap()
}

/// Walker with refresh period `l` in the default environment.
pub fn finite_range(l: Option<u64>) -> FiniteRangeParams {
    FiniteRangeParams::new(model(), walk(), l).unwrap()
}
