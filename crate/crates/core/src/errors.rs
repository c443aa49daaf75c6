//! Estimators for the three MSE components: interpolation, bias and
//! statistical error, plus the level-wise statistics that feed them.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rand_distr::{Binomial, Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::{check_tau, column_means, difference_matrix, phi_of};
use crate::hierarchy::{derive_seed, Hierarchy, LevelSamples};
use crate::kde::{scott_bandwidth, smoothed_diff_split, split_pairs};
use crate::spline::{self, FineOperator, ThetaGrid};
use crate::{Error, Result};

/// Level-wise statistics. Bias norms are stored before division by
/// `e^α − 1` since α is fitted from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: usize,
    pub samples: usize,
    /// `V̂_l`.
    pub v_hat: f64,
    /// `‖mean Δφ‖` over the nodes (level ≥ 1).
    pub diff_norm_naive: Option<f64>,
    /// `‖(S E^kde[Δφ])^(m)‖` on the fine grid, m = 0, 1, 2 (level ≥ 1).
    pub diff_norm_new: Option<[f64; 3]>,
    /// Per-sample cost `𝔠_l`.
    pub cost: f64,
}

/// All error estimates for one hierarchy, per derivative order m = 0, 1, 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub interp: [f64; 3],
    /// `None` where the fitted bias rate of that derivative is not positive.
    pub bias: [Option<f64>; 3],
    pub stat: [f64; 3],
    pub rescale_ratio: f64,
    pub v_tilde: Vec<f64>,
    pub n_bootstrap: usize,
    pub bootstrap_capped: bool,
    pub norm4: f64,
    pub levels: Vec<LevelStats>,
}

/// The three MSE components, each already multiplied by 3, and their sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseParts {
    pub total: f64,
    pub interp: f64,
    pub bias: f64,
    pub stat: f64,
}

/// `V̂_l = mean_i max_j |Δφ_ij|²`; level 0 uses `φ(θ_j, Q_0)` itself.
pub fn level_variance(ls: &LevelSamples, grid: &ThetaGrid, tau: f64) -> f64 {
    if ls.count() == 0 {
        return 0.0;
    }
    let n = grid.n;
    let m = difference_matrix(ls, &grid.nodes(), tau);
    m.chunks_exact(n)
        .map(|row| row.iter().fold(0.0f64, |a, v| a.max(v.abs())).powi(2))
        .sum::<f64>()
        / ls.count() as f64
}

fn mean_difference(ls: &LevelSamples, grid: &ThetaGrid, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if ls.level == 0 || ls.pairs.iter().any(|p| p.coarse.is_none()) {
        return Err(Error::invalid("bias estimates need a level >= 1"));
    }
    if ls.count() == 0 {
        return Err(Error::invalid(format!("level {} has no samples", ls.level)));
    }
    Ok(column_means(&difference_matrix(ls, &grid.nodes(), tau), grid.n))
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(alpha.exp_m1())
    } else {
        Err(Error::invalid(format!("bias rate must be positive, got {alpha}")))
    }
}

/// Sup-node norm of the mean level difference (undivided).
pub fn mean_diff_norm(ls: &LevelSamples, grid: &ThetaGrid, tau: f64) -> Result<f64> {
    Ok(mean_difference(ls, grid, tau)?.iter().fold(0.0, |a, v| a.max(v.abs())))
}

/// `b̂_l = ‖mean Δφ‖_{ℓ∞(θ)} / (e^α − 1)`.
pub fn level_bias_naive(ls: &LevelSamples, grid: &ThetaGrid, tau: f64, alpha: f64) -> Result<f64> {
    let div = check_alpha(alpha)?;
    Ok(mean_diff_norm(ls, grid, tau)? / div)
}

/// Fine-grid derivative norms of the spline through the mean level
/// difference, m = 0, 1, 2 (undivided).
pub fn naive_deriv_norms(ls: &LevelSamples, grid: &ThetaGrid, tau: f64, n_fine: usize) -> Result<[f64; 3]> {
    let curve = spline::fit(*grid, &mean_difference(ls, grid, tau)?)?;
    Ok([
        curve.sup_norm_deriv(0, n_fine)?,
        curve.sup_norm_deriv(1, n_fine)?,
        curve.sup_norm_deriv(2, n_fine)?,
    ])
}

/// Fine-grid derivative norms of the spline through the kernel-smoothed
/// level difference, m = 0, 1, 2 (undivided).
pub fn smoothed_deriv_norms(ls: &LevelSamples, grid: &ThetaGrid, tau: f64, n_fine: usize) -> Result<[f64; 3]> {
    check_tau(tau)?;
    let (fine, coarse) = split_pairs(&ls.pairs)?;
    let df = scott_bandwidth(&fine)?;
    let dc = scott_bandwidth(&coarse)?;
    smoothed_deriv_norms_with(&fine, &coarse, df, dc, grid, tau, n_fine)
}

/// As [`smoothed_deriv_norms`] with explicit bandwidths.
pub fn smoothed_deriv_norms_with(
    fine: &[f64],
    coarse: &[f64],
    delta_fine: f64,
    delta_coarse: f64,
    grid: &ThetaGrid,
    tau: f64,
    n_fine: usize,
) -> Result<[f64; 3]> {
    let values: Vec<f64> = grid
        .nodes()
        .into_iter()
        .map(|t| smoothed_diff_split(t, fine, coarse, delta_fine, delta_coarse, tau))
        .collect();
    let curve = spline::fit(*grid, &values)?;
    Ok([
        curve.sup_norm_deriv(0, n_fine)?,
        curve.sup_norm_deriv(1, n_fine)?,
        curve.sup_norm_deriv(2, n_fine)?,
    ])
}

/// Kernel-smoothed bias estimate `b̂_{l,new}^(m)`.
///
/// When a marginal has zero spread no bandwidth exists; m = 0 then falls back
/// to [`level_bias_naive`], higher orders fail.
pub fn bias_novel(
    ls: &LevelSamples,
    grid: &ThetaGrid,
    tau: f64,
    m: usize,
    alpha: f64,
    n_fine: usize,
) -> Result<f64> {
    if m > 2 {
        return Err(Error::invalid(format!("derivative order {m} exceeds 2")));
    }
    let div = check_alpha(alpha)?;
    match smoothed_deriv_norms(ls, grid, tau, n_fine) {
        Ok(norms) => Ok(norms[m] / div),
        Err(Error::Degenerate(_)) if m == 0 => level_bias_naive(ls, grid, tau, alpha),
        Err(e) => Err(e),
    }
}

/// `ê_i^(m) = C1(m) ‖Φ⁽⁴⁾‖ (|Θ|/n)^{4−m}`.
pub fn interp_error(norm4: f64, n: usize, m: usize, theta_len: f64) -> f64 {
    spline::c1(m) * norm4 * (theta_len / n as f64).powi(4 - m as i32)
}

/// `C2(m) C3 (n−1)^m b̂_L`.
pub fn apriori_bias(b_hat_l: f64, n: usize, m: usize, theta_len: f64) -> f64 {
    spline::c2(m, theta_len) * spline::c3() * ((n - 1) as f64).powi(m as i32) * b_hat_l
}

/// `C2(m) C3 (n−1)^m √(c(n) Σ V̂_l / N_l)`.
pub fn apriori_stat(v_hats: &[f64], n_ls: &[usize], n: usize, m: usize, theta_len: f64) -> f64 {
    let s: f64 = v_hats.iter().zip(n_ls).map(|(v, &nl)| v / nl as f64).sum();
    spline::c2(m, theta_len) * spline::c3() * ((n - 1) as f64).powi(m as i32) * (spline::c_of_n(n) * s).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub initial: usize,
    pub cap: usize,
    pub n_fine: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { initial: 100, cap: 12_800, n_fine: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapOutcome {
    /// `ê_{s,new}^(m)` (not squared).
    pub stat: [f64; 3],
    pub n_bootstrap: usize,
    pub capped: bool,
    /// Monte Carlo standard error of `Σ k_m (ê^(m))²`.
    pub std_error: f64,
}

/// Bootstrap statistical error of the interpolated MLMC estimator.
///
/// Replicates resample each level with replacement (pairs stay intact).
/// `N_bs` starts at `settings.initial` and doubles until the standard error
/// of `Σ k_m (ê^(m))²` drops below `0.01 · eps_s_sq`, or the cap is hit.
/// Replicate `b` draws from its own stream derived from `seed`, so results
/// do not depend on thread count.
pub fn bootstrap_stat_error(
    h: &Hierarchy,
    grid: &ThetaGrid,
    tau: f64,
    k: [f64; 3],
    eps_s_sq: f64,
    settings: &BootstrapSettings,
    seed: u64,
) -> Result<BootstrapOutcome> {
    check_tau(tau)?;
    check_weights(k)?;
    if !(eps_s_sq > 0.0) {
        return Err(Error::invalid("eps_s_sq must be positive"));
    }
    if settings.initial < 2 || settings.cap < settings.initial {
        return Err(Error::invalid("bootstrap needs 2 <= initial <= cap"));
    }
    if h.levels.is_empty() {
        return Err(Error::invalid("empty hierarchy"));
    }
    if let Some(ls) = h.levels.iter().find(|l| l.count() < 2) {
        return Err(Error::invalid(format!(
            "bootstrap needs >= 2 samples per level, level {} has {}",
            ls.level,
            ls.count()
        )));
    }
    let n = grid.n;
    let nodes = grid.nodes();
    let levels: Vec<CompressedLevel> = h
        .levels
        .iter()
        .map(|ls| {
            let base = if ls.level == 0 { nodes.clone() } else { vec![0.0; n] };
            CompressedLevel::new(&difference_matrix(ls, &nodes, tau), base)
        })
        .collect();
    let op = FineOperator::new(*grid, settings.n_fine)?;

    let replicate = |b: usize| -> Vec<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, 0, b as u64));
        let mut psi = vec![0.0; n];
        let mut counts = Vec::new();
        for lv in &levels {
            lv.add_resampled_mean(&mut rng, &mut counts, &mut psi);
        }
        psi
    };

    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut target = settings.initial;
    loop {
        let start = reps.len();
        reps.par_extend((start..target).into_par_iter().map(replicate));
        let (stat_sq, xs) = deviation_norms(&reps, &op, k);
        let count = xs.len() as f64;
        let mean_x = xs.iter().sum::<f64>() / count;
        let var_x = xs.iter().map(|x| (x - mean_x).powi(2)).sum::<f64>() / (count - 1.0);
        let std_error = (var_x / count).sqrt();
        let done = std_error < 0.01 * eps_s_sq;
        if done || target >= settings.cap {
            let capped = !done;
            if capped {
                log::warn!(
                    "bootstrap cap {} reached with standard error {std_error:.3e} (target {:.3e})",
                    settings.cap,
                    0.01 * eps_s_sq
                );
            }
            return Ok(BootstrapOutcome {
                stat: stat_sq.map(f64::sqrt),
                n_bootstrap: reps.len(),
                capped,
                std_error,
            });
        }
        target = (2 * target).min(settings.cap);
    }
}

/// One level's difference matrix with the rows equal to `base` removed.
///
/// Samples below every node produce the same row (`θ_j` at level 0, zero
/// above it). A with-replacement resample of `N` rows then draws the number
/// of non-constant rows from `Bin(N, active/N)` and resamples only those,
/// which has the same distribution as resampling all `N` indices.
struct CompressedLevel {
    rows: usize,
    active: usize,
    base: Vec<f64>,
    /// Distinct non-constant rows minus `base`, column-major.
    cols: Vec<Vec<f64>>,
    /// Active row index to distinct-row index, when some rows repeat.
    /// Repeats must share one slot so identical samples give bit-identical
    /// replicates.
    slot: Option<Vec<u32>>,
}

impl CompressedLevel {
    fn new(mat: &[f64], base: Vec<f64>) -> Self {
        let n = base.len();
        let mut cols = vec![Vec::new(); n];
        let mut seen: HashMap<Vec<u64>, u32> = HashMap::new();
        let mut slot = Vec::new();
        for row in mat.chunks_exact(n) {
            if row == base.as_slice() {
                continue;
            }
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let next = seen.len() as u32;
            let id = *seen.entry(key).or_insert(next);
            if id == next {
                for ((col, r), b) in cols.iter_mut().zip(row).zip(&base) {
                    col.push(r - b);
                }
            }
            slot.push(id);
        }
        let active = slot.len();
        let slot = (seen.len() < active).then_some(slot);
        Self { rows: mat.len() / n, active, base, cols, slot }
    }

    fn add_resampled_mean(&self, rng: &mut Xoshiro256PlusPlus, counts: &mut Vec<f64>, psi: &mut [f64]) {
        let a = self.active;
        for (p, b) in psi.iter_mut().zip(&self.base) {
            *p += b;
        }
        if a == 0 {
            return;
        }
        let draws = if a == self.rows {
            self.rows as u64
        } else {
            Binomial::new(self.rows as u64, a as f64 / self.rows as f64)
                .expect("probability in (0, 1)")
                .sample(rng)
        };
        counts.clear();
        counts.resize(self.cols[0].len(), 0.0);
        let pick = Uniform::new(0, a as u32).expect("non-empty range");
        match &self.slot {
            None => {
                for _ in 0..draws {
                    counts[pick.sample(rng) as usize] += 1.0;
                }
            }
            Some(slot) => {
                for _ in 0..draws {
                    counts[slot[pick.sample(rng) as usize] as usize] += 1.0;
                }
            }
        }
        let inv = 1.0 / self.rows as f64;
        for (p, col) in psi.iter_mut().zip(&self.cols) {
            *p += dot(counts, col) * inv;
        }
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            s[i] += x[i] * y[i];
        }
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Mean squared sup-norm deviation per m from the replicate mean, and the
/// per-replicate weighted sums `Σ k_m ‖·‖²`.
fn deviation_norms(reps: &[Vec<f64>], op: &FineOperator, k: [f64; 3]) -> ([f64; 3], Vec<f64>) {
    let n = reps[0].len();
    // Mean taken relative to the first replicate so identical replicates give
    // exactly zero deviations.
    let base = &reps[0];
    let mut shift = vec![0.0; n];
    for r in reps {
        for j in 0..n {
            shift[j] += r[j] - base[j];
        }
    }
    let mean: Vec<f64> = (0..n).map(|j| base[j] + shift[j] / reps.len() as f64).collect();
    let per: Vec<[f64; 3]> = reps
        .par_iter()
        .map(|r| {
            let d: Vec<f64> = r.iter().zip(&mean).map(|(a, b)| a - b).collect();
            [0, 1, 2].map(|m| op.sup_norm(m, &d).powi(2))
        })
        .collect();
    let mut sums = [0.0; 3];
    for p in &per {
        for m in 0..3 {
            sums[m] += p[m];
        }
    }
    let xs = per.iter().map(|p| k[0] * p[0] + k[1] * p[1] + k[2] * p[2]).collect();
    (sums.map(|s| s / reps.len() as f64), xs)
}

pub(crate) fn check_weights(k: [f64; 3]) -> Result<()> {
    if k.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("weights must be finite and non-negative, got {k:?}")));
    }
    if k.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("at least one weight must be positive"));
    }
    Ok(())
}

/// Rescaling ratio `r_e = Σ_m k_m (ê_s^(m))² / Σ_l V̂_l/N_l` and `Ṽ_l = r_e V̂_l`.
pub fn rescale(v_hats: &[f64], n_ls: &[usize], stat: [f64; 3], k: [f64; 3]) -> Result<(f64, Vec<f64>)> {
    if v_hats.len() != n_ls.len() {
        return Err(Error::invalid("v_hats and n_ls differ in length"));
    }
    let denom: f64 = v_hats.iter().zip(n_ls).map(|(v, &nl)| v / nl as f64).sum();
    if !(denom > 0.0) {
        return Err(Error::Numerical("sum of V_l/N_l is zero; cannot rescale".into()));
    }
    let num: f64 = (0..3).map(|m| k[m] * stat[m] * stat[m]).sum();
    let r = num / denom;
    Ok((r, v_hats.iter().map(|v| r * v).collect()))
}

/// `3 [Σ k_m ê_i² + Σ k_m ê_b² + Σ k_m ê_s²]` and its parts.
pub fn combined_mse(k: [f64; 3], report: &ErrorReport) -> Result<MseParts> {
    if k.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(format!("weights must be non-negative, got {k:?}")));
    }
    let mut bias = 0.0;
    for m in 0..3 {
        if k[m] > 0.0 {
            let b = report.bias[m].ok_or(Error::NonDecayingBias { m, rate: f64::NAN })?;
            bias += k[m] * b * b;
        }
    }
    let weighted = |e: &[f64; 3]| (0..3).map(|m| k[m] * e[m] * e[m]).sum::<f64>();
    let interp = 3.0 * weighted(&report.interp);
    let stat = 3.0 * weighted(&report.stat);
    let bias = 3.0 * bias;
    Ok(MseParts { total: interp + bias + stat, interp, bias, stat })
}

/// Factors `(λ(n)/|Θ|, Σ k_m K(n,m))` bracketing the statistical error
/// relative to `Σ V_l/N_l`; λ is the smallest eigenvalue of `Σ k_m B^(m)`.
pub fn lemma1_factors(grid: &ThetaGrid, k: [f64; 3]) -> Result<(f64, f64)> {
    check_weights(k)?;
    let n = grid.n;
    let mut b = DMatrix::<f64>::zeros(n, n);
    for (m, &km) in k.iter().enumerate() {
        if km == 0.0 {
            continue;
        }
        let g = spline::gram_matrix(*grid, m)?;
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] += km * g[i][j];
            }
        }
    }
    let lambda = SymmetricEigen::new(b).eigenvalues.min();
    let upper: f64 = (0..3).map(|m| k[m] * spline::k_factor(n, m, grid.length())).sum();
    Ok((lambda / grid.length(), upper))
}

/// `f` evaluated at the grid nodes.
pub fn node_values(grid: &ThetaGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    grid.nodes().into_iter().map(f).collect()
}

/// `φ`-difference Lipschitz bound `|Q_l − Q_{l−1}| / (1 − τ)`.
pub fn lipschitz_bound(fine: f64, coarse: f64, tau: f64) -> f64 {
    (fine - coarse).abs() / (1.0 - tau)
}

/// Largest node-wise `|φ(θ_j, fine) − φ(θ_j, coarse)|`.
pub fn max_node_difference(grid: &ThetaGrid, fine: f64, coarse: f64, tau: f64) -> f64 {
    grid.nodes()
        .into_iter()
        .map(|t| (phi_of(t, fine, tau) - phi_of(t, coarse, tau)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::CorrelatedPair;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn level(level: usize, pairs: &[(f64, Option<f64>)]) -> LevelSamples {
        LevelSamples {
            level,
            pairs: pairs.iter().map(|&(fine, coarse)| CorrelatedPair { level, fine, coarse }).collect(),
            total_cost: 0.0,
        }
    }

    fn grid() -> ThetaGrid {
        ThetaGrid::new(0.5, 2.5, 6).unwrap()
    }

    #[test]
    fn variance_of_identical_members_is_zero() {
        let ls = level(1, &[(1.0, Some(1.0)), (2.0, Some(2.0))]);
        assert_eq!(level_variance(&ls, &grid(), 0.7), 0.0);
    }

    #[test]
    fn variance_extremal_node() {
        let ls = level(1, &[(2.0, Some(1.0))]);
        let v = level_variance(&ls, &grid(), 0.7);
        assert!((v - (1.0f64 / 0.3).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn naive_bias_with_unit_divisor() {
        let ls = level(1, &[(2.0, Some(1.0)), (3.0, Some(2.0))]);
        let g = grid();
        let b = level_bias_naive(&ls, &g, 0.7, 2f64.ln()).unwrap();
        let direct = mean_difference(&ls, &g, 0.7).unwrap().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((b - direct).abs() < 1e-12);
        assert!(level_bias_naive(&ls, &g, 0.7, 0.0).is_err());
        let same = level(1, &[(2.0, Some(2.0))]);
        assert_eq!(level_bias_naive(&same, &g, 0.7, 1.0).unwrap(), 0.0);
        assert!(level_bias_naive(&level(0, &[(1.0, None)]), &g, 0.7, 1.0).is_err());
    }

    #[test]
    fn novel_bias_vanishes_for_identical_members() {
        let ls = level(1, &[(1.0, Some(1.0)), (2.0, Some(2.0)), (1.7, Some(1.7))]);
        for m in 0..3 {
            assert_eq!(bias_novel(&ls, &grid(), 0.7, m, 1.0, 200).unwrap(), 0.0);
        }
    }

    #[test]
    fn novel_bias_point_mass_limit_matches_naive() {
        let ls = level(1, &[(2.0, Some(1.6)), (0.9, Some(0.7)), (1.4, Some(1.5))]);
        let g = grid();
        let (f, c) = split_pairs(&ls.pairs).unwrap();
        let norms = smoothed_deriv_norms_with(&f, &c, 1e-10, 1e-10, &g, 0.7, 1000).unwrap();
        // The m = 0 spline norm on a fine grid containing the nodes dominates
        // the node norm; with δ → 0 node values coincide with the naive ones.
        let naive_nodes = mean_diff_norm(&ls, &g, 0.7).unwrap();
        let naive_spline = naive_deriv_norms(&ls, &g, 0.7, 1000).unwrap();
        assert!((norms[0] - naive_spline[0]).abs() < 1e-6);
        assert!(norms[0] >= naive_nodes - 1e-9);
    }

    #[test]
    fn degenerate_marginal_falls_back_for_m0_only() {
        let ls = level(1, &[(2.0, Some(1.0)), (2.0, Some(1.0))]);
        let g = grid();
        let b0 = bias_novel(&ls, &g, 0.7, 0, 1.0, 100).unwrap();
        assert!((b0 - level_bias_naive(&ls, &g, 0.7, 1.0).unwrap()).abs() < 1e-14);
        assert!(bias_novel(&ls, &g, 0.7, 1, 1.0, 100).is_err());
    }

    #[test]
    fn interp_and_apriori_formulas() {
        assert_eq!(interp_error(0.0, 10, 1, 1.0), 0.0);
        assert!((interp_error(384.0 / 5.0, 3, 0, 3.0) - 1.0).abs() < 1e-14);
        assert!((apriori_bias(2.0, 10, 0, 1.0) - 2.0 * spline::c3()).abs() < 1e-14);
        let f = apriori_bias(1.0, 10, 2, 1.0);
        assert!((f - 48.0 * spline::c3() * 81.0).abs() < 1e-9 && (f - 6341.0).abs() < 1.0);
        assert_eq!(apriori_stat(&[0.0, 0.0], &[10, 5], 10, 2, 1.0), 0.0);
    }

    #[test]
    fn rescale_identities() {
        let (r, vt) = rescale(&[4.0, 1.0], &[4, 1], [2f64.sqrt(), 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
        assert_eq!(vt, vec![4.0 * r, r]);
        let (r2, _) = rescale(&[4.0, 1.0], &[8, 2], [2f64.sqrt(), 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-14);
        assert!(rescale(&[0.0], &[3], [1.0; 3], [1.0; 3]).is_err());
    }

    #[test]
    fn combined_mse_arithmetic() {
        let e = 0.1;
        let rep = ErrorReport {
            interp: [0.0, e, 0.0],
            bias: [None, Some(e), None],
            stat: [0.0, e, 0.0],
            rescale_ratio: 1.0,
            v_tilde: vec![],
            n_bootstrap: 0,
            bootstrap_capped: false,
            norm4: 0.0,
            levels: vec![],
        };
        let p = combined_mse([0.0, 2.0, 0.0], &rep).unwrap();
        assert!((p.total - 9.0 * 2.0 * e * e).abs() < 1e-15);
        assert!(combined_mse([1.0, 0.0, 0.0], &rep).is_err());
        assert!(combined_mse([-1.0, 0.0, 0.0], &rep).is_err());
    }

    #[test]
    fn bootstrap_of_constant_samples_is_zero() {
        let h = Hierarchy {
            levels: vec![level(0, &[(1.0, None); 5]), level(1, &[(1.2, Some(1.1)); 4])],
        };
        let out = bootstrap_stat_error(&h, &grid(), 0.7, [1.0, 1.0, 1.0], 1e-3, &BootstrapSettings::default(), 1)
            .unwrap();
        assert_eq!(out.stat, [0.0; 3]);
        assert_eq!(out.n_bootstrap, 100);
    }

    #[test]
    fn bootstrap_requires_two_samples() {
        let h = Hierarchy { levels: vec![level(0, &[(1.0, None)])] };
        assert!(bootstrap_stat_error(&h, &grid(), 0.7, [1.0, 0.0, 0.0], 1e-3, &BootstrapSettings::default(), 1)
            .is_err());
    }

    #[test]
    fn bootstrap_of_a_mean_matches_classical_variance() {
        // With Θ below all samples φ is affine in Q, so the sup over θ of the
        // deviation equals |mean deviation| / (1 − τ).
        let n = 1000u64;
        let qs: Vec<(f64, Option<f64>)> = (0..n)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(derive_seed(2, 0, i));
                (5.0 + r.random::<f64>() * 2.0, None)
            })
            .collect();
        let h = Hierarchy { levels: vec![level(0, &qs)] };
        let g = ThetaGrid::new(0.0, 1.0, 5).unwrap();
        let tau = 0.5;
        let out = bootstrap_stat_error(&h, &g, tau, [1.0, 0.0, 0.0], 1e-9, &BootstrapSettings::default(), 3)
            .unwrap();
        let mean = qs.iter().map(|q| q.0).sum::<f64>() / n as f64;
        let var = qs.iter().map(|q| (q.0 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = var / n as f64 / (1.0 - tau).powi(2);
        let got = out.stat[0].powi(2);
        assert!((got / expect - 1.0).abs() < 0.25, "{got} vs {expect}");
        assert!(out.capped);
    }

    #[test]
    fn lemma1_factors_are_ordered() {
        let g = ThetaGrid::new(1.5, 2.5, 10).unwrap();
        let (lo, hi) = lemma1_factors(&g, [1.0, 1.0, 1.0]).unwrap();
        assert!(lo > 0.0 && lo < hi);
    }

    #[test]
    fn lipschitz_bound_holds() {
        let g = grid();
        for (f, c) in [(1.0, 2.0), (0.7, 0.71), (3.0, -1.0)] {
            assert!(max_node_difference(&g, f, c, 0.7) <= lipschitz_bound(f, c, 0.7) + 1e-12);
        }
    }
}
