//! Level-wise correlated QoI samples and the deterministic sampling driver.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fine/coarse QoI realisations computed from one random input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub level: usize,
    pub fine: f64,
    /// Absent at level 0.
    pub coarse: Option<f64>,
}

/// A stochastic model that can produce correlated level pairs.
pub trait Model: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    /// Fine QoI at `level` and, for `level >= 1`, the coarse QoI at
    /// `level - 1` computed from the same random input.
    fn sample(&self, level: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Option<f64>)>;

    /// Theoretical cost of one QoI evaluation at `level` (model units).
    fn unit_cost(&self, level: usize) -> f64;

    /// Deepest level the model supports.
    fn max_level(&self) -> usize;

    /// Exact `(q_τ, c_τ)` when the model has an analytic reference.
    fn exact_var_cvar(&self, _tau: f64) -> Option<Result<(f64, f64)>> {
        None
    }

    /// Exact `Φ(θ)` of the limiting QoI when known.
    fn exact_phi(&self, _theta: f64, _tau: f64) -> Option<f64> {
        None
    }
}

/// How per-sample cost is accounted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Model-declared cost proportional to degrees of freedom. Deterministic.
    Theoretical,
    /// Wall-clock seconds per drawn pair.
    Measured,
}

/// Everything needed to reproduce any sample: model, seed, cost accounting.
#[derive(Clone, Debug)]
pub struct Sampler {
    pub model: Arc<dyn Model>,
    pub base_seed: u64,
    pub cost_model: CostModel,
}

impl Sampler {
    pub fn new(model: Arc<dyn Model>, base_seed: u64, cost_model: CostModel) -> Self {
        Self { model, base_seed, cost_model }
    }

    /// Theoretical cost of one pair at `level`: fine plus coarse evaluation.
    pub fn pair_cost(&self, level: usize) -> f64 {
        let fine = self.model.unit_cost(level);
        if level == 0 {
            fine
        } else {
            fine + self.model.unit_cost(level - 1)
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed for sample `index` at `level`. Independent of draw order.
pub fn derive_seed(base_seed: u64, level: usize, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ level as u64) ^ index)
}

/// Seed for an auxiliary stream (bootstrap, repetitions) that never collides
/// with the sampling streams for realistic level counts.
pub fn derive_stream(base_seed: u64, stream: u64) -> u64 {
    derive_seed(base_seed ^ 0xA5A5_5A5A_F00D_D00D, usize::MAX, stream)
}

pub fn draw_pair(sampler: &Sampler, level: usize, index: u64) -> Result<CorrelatedPair> {
    if level > sampler.model.max_level() {
        return Err(Error::Sampler {
            level,
            index,
            reason: format!("model supports levels up to {}", sampler.model.max_level()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sampler.base_seed, level, index));
    let (fine, coarse) = sampler
        .model
        .sample(level, &mut rng)
        .map_err(|e| Error::Sampler { level, index, reason: e.to_string() })?;
    Ok(CorrelatedPair { level, fine, coarse })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSamples {
    pub level: usize,
    pub pairs: Vec<CorrelatedPair>,
    /// Sum of per-pair costs (seconds or model units, per [`CostModel`]).
    pub total_cost: f64,
}

impl LevelSamples {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn per_sample_cost(&self) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            self.total_cost / self.pairs.len() as f64
        }
    }

    pub fn fine_values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.fine).collect()
    }
}

/// The MLMC hierarchy: contiguous levels `0..=L`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Hierarchy {
    pub levels: Vec<LevelSamples>,
}

impl Hierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Finest level `L`, or `None` when empty.
    pub fn finest(&self) -> Option<usize> {
        self.levels.len().checked_sub(1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(LevelSamples::count).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.levels.iter().map(|l| l.total_cost).sum()
    }

    pub fn summary(&self) -> HierarchySummary {
        HierarchySummary {
            levels: self
                .levels
                .iter()
                .map(|l| LevelSummary {
                    level: l.level,
                    samples: l.count(),
                    per_sample_cost: l.per_sample_cost(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub samples: usize,
    pub per_sample_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchySummary {
    pub levels: Vec<LevelSummary>,
}

/// Extends `h` to `target_l + 1` levels with at least `target_sizes[l]`
/// pairs each. Existing pairs are kept; new ones continue the index sequence.
pub fn grow_hierarchy(
    mut h: Hierarchy,
    target_sizes: &[usize],
    target_l: usize,
    sampler: &Sampler,
) -> Result<Hierarchy> {
    if target_sizes.len() != target_l + 1 {
        return Err(Error::invalid(format!(
            "target_sizes has {} entries, expected {}",
            target_sizes.len(),
            target_l + 1
        )));
    }
    if let Some(current) = h.finest() {
        if target_l < current {
            return Err(Error::Shrink { current, target: target_l });
        }
    }
    for (level, &target) in target_sizes.iter().enumerate() {
        if level >= h.levels.len() {
            if target == 0 {
                return Err(Error::invalid(format!("new level {level} needs at least one sample")));
            }
            h.levels.push(LevelSamples { level, pairs: Vec::new(), total_cost: 0.0 });
        }
        let ls = &mut h.levels[level];
        let start = ls.pairs.len() as u64;
        let end = (target as u64).max(start);
        if end == start {
            continue;
        }
        let drawn: Vec<(CorrelatedPair, f64)> = (start..end)
            .into_par_iter()
            .map(|i| {
                let t0 = Instant::now();
                let p = draw_pair(sampler, level, i)?;
                Ok((p, t0.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;
        let added = match sampler.cost_model {
            CostModel::Theoretical => (end - start) as f64 * sampler.pair_cost(level),
            CostModel::Measured => drawn.iter().map(|(_, s)| s).sum(),
        };
        ls.pairs.extend(drawn.into_iter().map(|(p, _)| p));
        ls.total_cost += added;
    }
    Ok(h)
}
