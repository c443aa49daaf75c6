//! Multilevel and single-level Monte Carlo estimators of `Φ` on the node grid.

use crate::hierarchy::{Hierarchy, LevelSamples};
use crate::spline::{self, SplineCurve, ThetaGrid};
use crate::{Error, Result};

/// `φ(θ, q) = θ + (q − θ)⁺ / (1 − τ)`.
#[inline]
pub fn phi_of(theta: f64, q: f64, tau: f64) -> f64 {
    theta + (q - theta).max(0.0) / (1.0 - tau)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Per-sample node contributions of one level, row-major `N × n`:
/// `φ(θ_j, Q_l) − φ(θ_j, Q_{l−1})`, or `φ(θ_j, Q_0)` at level 0.
pub fn difference_matrix(ls: &LevelSamples, nodes: &[f64], tau: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ls.count() * nodes.len());
    for p in &ls.pairs {
        match p.coarse {
            None => out.extend(nodes.iter().map(|&t| phi_of(t, p.fine, tau))),
            Some(c) => out.extend(nodes.iter().map(|&t| phi_of(t, p.fine, tau) - phi_of(t, c, tau))),
        }
    }
    out
}

/// Column means of a row-major matrix with `n` columns.
pub(crate) fn column_means(m: &[f64], n: usize) -> Vec<f64> {
    let rows = m.len() / n;
    let mut s = vec![0.0; n];
    for row in m.chunks_exact(n) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s.iter_mut().for_each(|a| *a /= rows as f64);
    s
}

/// Interpolated MLMC estimate of `Φ`.
#[derive(Clone, Debug)]
pub struct PhiEstimate {
    pub grid: ThetaGrid,
    pub tau: f64,
    pub pointwise: Vec<f64>,
    pub curve: SplineCurve,
    /// Samples per level of the source hierarchy.
    pub sizes: Vec<usize>,
}

/// `Φ̂_L(θ_j)`: level-0 mean plus the telescoping corrections, all nodes
/// sharing the same samples.
pub fn mlmc_pointwise(h: &Hierarchy, grid: &ThetaGrid, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if h.levels.is_empty() {
        return Err(Error::invalid("empty hierarchy"));
    }
    let nodes = grid.nodes();
    let mut total = vec![0.0; grid.n];
    for ls in &h.levels {
        if ls.count() == 0 {
            return Err(Error::invalid(format!("level {} has no samples", ls.level)));
        }
        let mut acc = vec![0.0; grid.n];
        for p in &ls.pairs {
            for (a, &t) in acc.iter_mut().zip(&nodes) {
                *a += match p.coarse {
                    None => phi_of(t, p.fine, tau),
                    Some(c) => phi_of(t, p.fine, tau) - phi_of(t, c, tau),
                };
            }
        }
        let n = ls.count() as f64;
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a / n;
        }
    }
    Ok(total)
}

pub fn build_estimate(h: &Hierarchy, grid: &ThetaGrid, tau: f64) -> Result<PhiEstimate> {
    let pointwise = mlmc_pointwise(h, grid, tau)?;
    let curve = spline::fit(*grid, &pointwise)?;
    Ok(PhiEstimate { grid: *grid, tau, pointwise, curve, sizes: h.sizes() })
}

/// Single-level estimate `(1/N) Σ φ(θ_j, Q_L^(i))`.
pub fn mc_pointwise(samples: &[f64], grid: &ThetaGrid, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let n = samples.len() as f64;
    Ok(grid
        .nodes()
        .into_iter()
        .map(|t| samples.iter().map(|&q| phi_of(t, q, tau)).sum::<f64>() / n)
        .collect())
}
