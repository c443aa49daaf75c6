//! Shared fixtures for the criterion benchmarks in `benches/`.

use std::sync::Arc;

use mlmc_risk::hierarchy::grow_hierarchy;
use mlmc_risk::{CostModel, Hierarchy, PoissonModel, Sampler, ThetaGrid};

pub const TAU: f64 = 0.5;

/// The Poisson benchmark grid on `[1.5, 2.5]`.
pub fn grid(n: usize) -> ThetaGrid {
    ThetaGrid::new(1.5, 2.5, n).expect("valid grid")
}

/// A Poisson hierarchy with `sizes[l]` pairs on level `l`.
pub fn poisson_hierarchy(sizes: &[usize], seed: u64) -> Hierarchy {
    let sampler = Sampler::new(Arc::new(PoissonModel::default()), seed, CostModel::Theoretical);
    grow_hierarchy(Hierarchy::new(), sizes, sizes.len() - 1, &sampler).expect("sampling succeeds")
}
