//! Repeated-run studies: reliability, complexity and the comparisons of the
//! error estimators against brute-force or exact references.
//!
//! Every study returns plain rows; writing them is the caller's business.
//! Repetitions run in parallel, each from its own derived seed, so results
//! do not depend on the thread count.

use std::sync::Arc;

use mlmc_risk::errors::{
    apriori_bias, apriori_stat, bootstrap_stat_error, interp_error, lemma1_factors, level_bias_naive,
    level_variance, naive_deriv_norms, smoothed_deriv_norms, BootstrapSettings,
};
use mlmc_risk::estimator::{mlmc_pointwise, phi_of};
use mlmc_risk::hierarchy::{derive_stream, draw_pair, grow_hierarchy, Model};
use mlmc_risk::models::{poisson_level_phi_deriv, poisson_phi_deriv};
use mlmc_risk::spline::{fit, uniform_points, FineOperator};
use mlmc_risk::tuning::fit_rate;
use mlmc_risk::{
    cmlmc_run, CmlmcConfig, CostModel, Error, Hierarchy, LevelSamples, PoissonModel, Result, Sampler,
    StatisticKind, ThetaGrid,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------
// CMLMC repetitions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Iteration cap reached; the partial run is still reported.
    Cap,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::Cap => "cap",
            RunStatus::Failed => "failed",
        }
    }
}

/// What the studies need from one CMLMC run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub var_hat: f64,
    pub cvar_hat: f64,
    pub mse: f64,
    pub cost: f64,
    pub finest_level: usize,
    pub nodes: usize,
    /// Rescaled level-0 variance, the single-level variance proxy.
    pub v_tilde0: f64,
}

#[derive(Clone, Debug)]
pub struct RepOutcome {
    pub tolerance: f64,
    pub rep: usize,
    pub status: RunStatus,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Seed of repetition `rep` at tolerance index `ti`.
pub fn rep_seed(base: u64, ti: usize, rep: usize) -> u64 {
    derive_stream(base, ((ti as u64) << 32) | rep as u64)
}

fn summarize(r: &mlmc_risk::RunResult) -> RunSummary {
    RunSummary {
        var_hat: r.risk.var_hat,
        cvar_hat: r.risk.cvar_hat,
        mse: r.mse.total,
        cost: r.total_cost(),
        finest_level: r.hierarchy.finest().unwrap_or(0),
        nodes: r.estimate.grid.n,
        v_tilde0: r.errors.v_tilde[0],
    }
}

/// `reps` independent CMLMC runs at each tolerance.
pub fn run_repetitions(base: &CmlmcConfig, statistic: StatisticKind, tolerances: &[f64], reps: usize) -> Vec<RepOutcome> {
    let jobs: Vec<(usize, usize)> = (0..tolerances.len()).flat_map(|t| (0..reps).map(move |r| (t, r))).collect();
    jobs.par_iter()
        .map(|&(ti, rep)| {
            let mut cfg = base.clone();
            cfg.eps = tolerances[ti];
            cfg.seed = rep_seed(base.seed, ti, rep);
            let out = match cmlmc_run(&cfg, statistic) {
                Ok(r) => (RunStatus::Converged, Some(summarize(&r)), None),
                Err(Error::IterationCap { partial, .. }) => (RunStatus::Cap, Some(summarize(&partial)), None),
                Err(e) => (RunStatus::Failed, None, Some(e.to_string())),
            };
            log::info!("eps={} rep={rep}: {}", tolerances[ti], out.0.as_str());
            if let Some(e) = &out.2 {
                log::warn!("eps={} rep={rep} failed: {e}", tolerances[ti]);
            }
            RepOutcome { tolerance: tolerances[ti], rep, status: out.0, summary: out.1, error: out.2 }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub tolerance: f64,
    pub rep: usize,
    pub stat: String,
    pub true_sq_err: f64,
    pub est_mse: f64,
    pub cost: f64,
    pub status: RunStatus,
}

/// Rows of the reliability table. `statistic` must be VaR or CVaR.
pub fn reliability_rows(outcomes: &[RepOutcome], statistic: StatisticKind, reference: f64) -> Vec<ReliabilityRow> {
    outcomes
        .iter()
        .map(|o| {
            let (err, mse, cost) = match &o.summary {
                Some(s) => {
                    let v = if statistic == StatisticKind::Var { s.var_hat } else { s.cvar_hat };
                    ((v - reference).powi(2), s.mse, s.cost)
                }
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            ReliabilityRow {
                tolerance: o.tolerance,
                rep: o.rep,
                stat: statistic.to_string(),
                true_sq_err: err,
                est_mse: mse,
                cost,
                status: o.status,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub tolerance: f64,
    pub mean_mlmc_cost: f64,
    pub mc_cost_estimate: f64,
    /// Finest level used for the Monte Carlo baseline.
    pub mc_level: usize,
    pub runs: usize,
}

/// Mean MLMC cost per tolerance and the single-level Monte Carlo estimate.
///
/// The baseline keeps the CMLMC node count and finest level `L` (the deepest
/// over repetitions) and takes `N = ⌈Ṽ_0 / ε_s²⌉` samples of `Q_L`, where
/// `Ṽ_0` is the rescaled level-0 variance of each run.
pub fn complexity_rows(outcomes: &[RepOutcome], model: &dyn Model, weights: [f64; 3]) -> Vec<ComplexityRow> {
    let mut tols: Vec<f64> = Vec::new();
    for o in outcomes {
        if !tols.contains(&o.tolerance) {
            tols.push(o.tolerance);
        }
    }
    tols.into_iter()
        .filter_map(|tol| {
            let runs: Vec<&RunSummary> = outcomes
                .iter()
                .filter(|o| o.tolerance == tol && o.status == RunStatus::Converged)
                .filter_map(|o| o.summary.as_ref())
                .collect();
            if runs.is_empty() {
                return None;
            }
            let k = runs.len() as f64;
            let level = runs.iter().map(|s| s.finest_level).max().unwrap_or(0);
            let eps_s_sq = weights[2] * tol * tol / 3.0;
            let unit = model.unit_cost(level);
            let mc = runs.iter().map(|s| (s.v_tilde0 / eps_s_sq).ceil().max(1.0) * unit).sum::<f64>() / k;
            Some(ComplexityRow {
                tolerance: tol,
                mean_mlmc_cost: runs.iter().map(|s| s.cost).sum::<f64>() / k,
                mc_cost_estimate: mc,
                mc_level: level,
                runs: runs.len(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Estimator comparisons on the Poisson model (exact Φ and Φ_l known)

/// Shared setup of the comparison studies.
#[derive(Clone, Debug)]
pub struct CompareSetup {
    pub tau: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_fine: usize,
    pub seed: u64,
}

impl CompareSetup {
    fn grid(&self, n: usize) -> Result<ThetaGrid> {
        ThetaGrid::new(self.theta_min, self.theta_max, n)
    }

    fn fine_points(&self) -> Vec<f64> {
        uniform_points(self.theta_min, self.theta_max, self.n_fine)
    }
}

fn poisson_q(level: usize) -> Result<f64> {
    PoissonModel::default().factor(level)
}

/// `Φ_l^{(m)}` for the level-l QoI, or the limit `Φ^{(m)}` for `None`.
fn phi_level(theta: f64, tau: f64, q_l: Option<f64>, m: usize) -> Result<f64> {
    match q_l {
        Some(q) => poisson_level_phi_deriv(theta, tau, q, m),
        None => poisson_phi_deriv(theta, tau, m),
    }
}

fn poisson_sampler(seed: u64) -> Sampler {
    Sampler::new(Arc::new(PoissonModel::default()), seed, CostModel::Theoretical)
}

fn draw_level(seed: u64, level: usize, count: usize) -> Result<LevelSamples> {
    let s = poisson_sampler(seed);
    let pairs = (0..count as u64).map(|i| draw_pair(&s, level, i)).collect::<Result<Vec<_>>>()?;
    Ok(LevelSamples { level, pairs, total_cost: 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpRow {
    pub n: usize,
    pub m: usize,
    pub true_err: f64,
    pub estimate: f64,
}

/// Spline interpolation of the exact Φ: sup-norm error against `ê_i`.
pub fn interp_study(setup: &CompareSetup, ns: &[usize]) -> Result<Vec<InterpRow>> {
    let xs = setup.fine_points();
    let norm4 = xs
        .iter()
        .map(|&x| poisson_phi_deriv(x, setup.tau, 4).map(f64::abs))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let mut rows = Vec::new();
    for &n in ns {
        let g = setup.grid(n)?;
        let vals = g.nodes().into_iter().map(|t| poisson_phi_deriv(t, setup.tau, 0)).collect::<Result<Vec<_>>>()?;
        let curve = fit(g, &vals)?;
        for m in 0..3 {
            let mut err: f64 = 0.0;
            for &x in &xs {
                err = err.max((curve.eval_unchecked(m, x) - poisson_phi_deriv(x, setup.tau, m)?).abs());
            }
            rows.push(InterpRow { n, m, true_err: err, estimate: interp_error(norm4, n, m, g.length()) });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub level: usize,
    pub samples: usize,
    pub rep: usize,
    pub m: usize,
    pub true_err: f64,
    pub apriori: f64,
    pub naive: f64,
    pub new: f64,
}

/// `sup |Φ_l^{(m)} − Φ^{(m)}|` on the fine grid, m = 0, 1, 2.
fn true_bias(setup: &CompareSetup, level: usize) -> Result<[f64; 3]> {
    let q = poisson_q(level)?;
    let mut out = [0.0f64; 3];
    for x in setup.fine_points() {
        for (m, o) in out.iter_mut().enumerate() {
            *o = o.max((phi_level(x, setup.tau, Some(q), m)? - phi_level(x, setup.tau, None, m)?).abs());
        }
    }
    Ok(out)
}

fn bias_estimates(
    setup: &CompareSetup,
    grid: &ThetaGrid,
    ls: &LevelSamples,
    alpha: f64,
    truth: [f64; 3],
    rep: usize,
) -> Result<Vec<BiasRow>> {
    let div = alpha.exp() - 1.0;
    let b_naive_l = level_bias_naive(ls, grid, setup.tau, alpha)?;
    let naive = naive_deriv_norms(ls, grid, setup.tau, setup.n_fine)?;
    let new = smoothed_deriv_norms(ls, grid, setup.tau, setup.n_fine)?;
    Ok((0..3)
        .map(|m| BiasRow {
            level: ls.level,
            samples: ls.count(),
            rep,
            m,
            true_err: truth[m],
            apriori: apriori_bias(b_naive_l, grid.n, m, grid.length()),
            naive: naive[m] / div,
            new: new[m] / div,
        })
        .collect())
}

/// Bias estimators at one level for several sample sizes, `reps` times each.
pub fn bias_study(
    setup: &CompareSetup,
    level: usize,
    nodes: usize,
    samples: &[usize],
    reps: usize,
    alpha: f64,
) -> Result<Vec<BiasRow>> {
    let grid = setup.grid(nodes)?;
    let truth = true_bias(setup, level)?;
    let jobs: Vec<(usize, usize)> = (0..samples.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(si, rep)| {
            let seed = derive_stream(setup.seed, ((si as u64) << 32) | rep as u64);
            let ls = draw_level(seed, level, samples[si])?;
            bias_estimates(setup, &grid, &ls, alpha, truth, rep)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    pub estimator: String,
    pub m: usize,
    /// Mean over repetitions of the fitted per-level decay rate.
    pub mean_rate: f64,
}

/// Bias estimators on levels `1..=levels`, `samples` pairs each, and the
/// mean fitted decay rate of each estimator.
pub fn bias_decay_study(
    setup: &CompareSetup,
    levels: usize,
    nodes: usize,
    samples: usize,
    reps: usize,
    alpha: f64,
) -> Result<(Vec<BiasRow>, Vec<DecayRate>)> {
    let grid = setup.grid(nodes)?;
    let truths = (1..=levels).map(|l| true_bias(setup, l)).collect::<Result<Vec<_>>>()?;
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rows = Vec::new();
            for l in 1..=levels {
                // Stream tag offset keeps these draws apart from bias_study's.
                let seed = derive_stream(setup.seed, (1u64 << 48) | ((l as u64) << 32) | rep as u64);
                let ls = draw_level(seed, l, samples)?;
                rows.extend(bias_estimates(setup, &grid, &ls, alpha, truths[l - 1], rep)?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rates = Vec::new();
    type Column = fn(&BiasRow) -> f64;
    let pick: [(&str, Column); 4] =
        [("true", |r| r.true_err), ("apriori", |r| r.apriori), ("naive", |r| r.naive), ("new", |r| r.new)];
    for (name, f) in pick {
        for m in 0..3 {
            let mut sum = 0.0;
            let mut count = 0usize;
            for rows in &per_rep {
                let pts: Vec<(usize, f64)> = rows.iter().filter(|r| r.m == m).map(|r| (r.level, f(r))).collect();
                if let Ok(fit) = fit_rate(&pts) {
                    sum += fit.decay_rate();
                    count += 1;
                }
            }
            let mean_rate = if count > 0 { sum / count as f64 } else { f64::NAN };
            rates.push(DecayRate { estimator: name.to_string(), m, mean_rate });
        }
    }
    Ok((per_rep.into_iter().flatten().collect(), rates))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub r: i32,
    pub n0: usize,
    pub m: usize,
    pub true_err: f64,
    pub apriori: f64,
    pub bootstrap: f64,
}

/// `N_l = max(2, ⌊N₀ 2^{r l}⌋)`. The floor of 2 keeps every level
/// resamplable.
pub fn shape_sizes(n0: usize, r: i32, levels: usize) -> Vec<usize> {
    (0..=levels)
        .map(|l| ((n0 as f64 * 2f64.powi(r * l as i32)).floor() as usize).max(2))
        .collect()
}

fn draw_hierarchy(seed: u64, sizes: &[usize]) -> Result<Hierarchy> {
    grow_hierarchy(Hierarchy::new(), sizes, sizes.len() - 1, &poisson_sampler(seed))
}

/// Node values of the exact `Φ_L`.
fn exact_level_nodes(grid: &ThetaGrid, tau: f64, level: usize) -> Result<Vec<f64>> {
    let q = poisson_q(level)?;
    grid.nodes().into_iter().map(|t| phi_level(t, tau, Some(q), 0)).collect()
}

/// Brute-force `E ‖S^{(m)}(Φ̂_L − Φ_L)‖²` over `n_ref` hierarchies of the
/// given sizes, m = 0, 1, 2.
fn brute_force_stat(
    setup: &CompareSetup,
    grid: &ThetaGrid,
    op: &FineOperator,
    sizes: &[usize],
    n_ref: usize,
    stream: u64,
) -> Result<[f64; 3]> {
    let exact = exact_level_nodes(grid, setup.tau, sizes.len() - 1)?;
    let sq = (0..n_ref)
        .into_par_iter()
        .map(|i| {
            let h = draw_hierarchy(derive_stream(setup.seed, stream + i as u64), sizes)?;
            let est = mlmc_pointwise(&h, grid, setup.tau)?;
            let diff: Vec<f64> = est.iter().zip(&exact).map(|(a, b)| a - b).collect();
            Ok([0, 1, 2].map(|m| op.sup_norm(m, &diff).powi(2)))
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let mut mean = [0.0; 3];
    for s in &sq {
        for m in 0..3 {
            mean[m] += s[m] / n_ref as f64;
        }
    }
    Ok(mean)
}

/// Bootstrap and a-priori statistical error of one hierarchy per shape,
/// against a brute-force reference over `n_ref` hierarchies.
pub fn stat_study(
    setup: &CompareSetup,
    levels: usize,
    nodes: usize,
    n0s: &[usize],
    rs: &[i32],
    n_ref: usize,
    n_bs: usize,
) -> Result<Vec<StatRow>> {
    let grid = setup.grid(nodes)?;
    let op = FineOperator::new(grid, setup.n_fine)?;
    let settings = BootstrapSettings { initial: n_bs, cap: n_bs, n_fine: setup.n_fine };
    let mut rows = Vec::new();
    let mut shape = 0u64;
    for &r in rs {
        for &n0 in n0s {
            shape += 1;
            let sizes = shape_sizes(n0, r, levels);
            let truth = brute_force_stat(setup, &grid, &op, &sizes, n_ref, (2u64 << 48) | (shape << 32))?;
            let h = draw_hierarchy(derive_stream(setup.seed, (3u64 << 48) | shape), &sizes)?;
            let v: Vec<f64> = h.levels.iter().map(|ls| level_variance(ls, &grid, setup.tau)).collect();
            // N_bs stays fixed: initial == cap, and the target is out of reach.
            let boot = bootstrap_stat_error(
                &h,
                &grid,
                setup.tau,
                [1.0; 3],
                f64::MAX / 1e3,
                &settings,
                derive_stream(setup.seed, (4u64 << 48) | shape),
            )?;
            for m in 0..3 {
                rows.push(StatRow {
                    r,
                    n0,
                    m,
                    true_err: truth[m].sqrt(),
                    apriori: apriori_stat(&v, &sizes, nodes, m, grid.length()),
                    bootstrap: boot.stat[m],
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lower_factor: f64,
    pub upper_factor: f64,
    /// `Σ V_l / N_l` with `V_l` the centred level second moment.
    pub sum_v_over_n: f64,
    /// Same with the uncentred `V̂_l` used elsewhere.
    pub sum_v_hat_over_n: f64,
    /// Brute-force `Σ_m k_m (e_s^(m))²`.
    pub stat_sq: f64,
    pub ratio: f64,
}

/// Brute-force check of the bracket
/// `λ(n)/|Θ| Σ V_l/N_l ≤ Σ_m k_m (e_s^(m))² ≤ Σ_m k_m K(n,m) Σ V_l/N_l`.
///
/// `V_l` is the second moment of `‖Δφ_l − E Δφ_l‖_∞` over the nodes, with the
/// exact level means; the bracket concerns the variance of the estimator, so
/// centring matters on level 0 where the mean dominates.
pub fn lemma_study(setup: &CompareSetup, sizes: &[usize], nodes: usize, reps: usize, k: [f64; 3]) -> Result<LemmaRow> {
    let grid = setup.grid(nodes)?;
    let op = FineOperator::new(grid, setup.n_fine)?;
    let levels = sizes.len() - 1;
    let means: Vec<Vec<f64>> = (0..=levels)
        .map(|l| {
            let fine = exact_level_nodes(&grid, setup.tau, l)?;
            if l == 0 {
                return Ok(fine);
            }
            let coarse = exact_level_nodes(&grid, setup.tau, l - 1)?;
            Ok(fine.iter().zip(&coarse).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let nodes_v = grid.nodes();
    let exact_top = exact_level_nodes(&grid, setup.tau, levels)?;

    let per_rep = (0..reps)
        .into_par_iter()
        .map(|i| {
            let h = draw_hierarchy(derive_stream(setup.seed, (5u64 << 48) | i as u64), sizes)?;
            let mut centred = vec![0.0; levels + 1];
            let mut raw = vec![0.0; levels + 1];
            for ls in &h.levels {
                let mean = &means[ls.level];
                let mut acc = 0.0;
                for p in &ls.pairs {
                    let mut worst: f64 = 0.0;
                    for (j, &t) in nodes_v.iter().enumerate() {
                        let d = phi_of(t, p.fine, setup.tau) - p.coarse.map_or(0.0, |c| phi_of(t, c, setup.tau));
                        worst = worst.max((d - mean[j]).abs());
                    }
                    acc += worst * worst;
                }
                centred[ls.level] = acc / ls.count() as f64;
                raw[ls.level] = level_variance(ls, &grid, setup.tau);
            }
            let est = mlmc_pointwise(&h, &grid, setup.tau)?;
            let diff: Vec<f64> = est.iter().zip(&exact_top).map(|(a, b)| a - b).collect();
            let s: f64 = (0..3).map(|m| k[m] * op.sup_norm(m, &diff).powi(2)).sum();
            Ok((centred, raw, s))
        })
        .collect::<Result<Vec<_>>>()?;

    let r = reps as f64;
    let mut sum_v = 0.0;
    let mut sum_raw = 0.0;
    for l in 0..=levels {
        let v: f64 = per_rep.iter().map(|p| p.0[l]).sum::<f64>() / r;
        let raw: f64 = per_rep.iter().map(|p| p.1[l]).sum::<f64>() / r;
        sum_v += v / sizes[l] as f64;
        sum_raw += raw / sizes[l] as f64;
    }
    let stat_sq = per_rep.iter().map(|p| p.2).sum::<f64>() / r;
    let (lower, upper) = lemma1_factors(&grid, k)?;
    Ok(LemmaRow {
        lower_factor: lower,
        upper_factor: upper,
        sum_v_over_n: sum_v,
        sum_v_hat_over_n: sum_raw,
        stat_sq,
        ratio: stat_sq / sum_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> CompareSetup {
        CompareSetup { tau: 0.7, theta_min: 1.5, theta_max: 2.5, n_fine: 200, seed: 5 }
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 2.5).abs() < 1e-12);
    }

    #[test]
    fn shapes() {
        assert_eq!(shape_sizes(50, -1, 5), vec![50, 25, 12, 6, 3, 2]);
        assert_eq!(shape_sizes(50, 0, 2), vec![50, 50, 50]);
        assert_eq!(shape_sizes(50, 1, 3), vec![50, 100, 200, 400]);
    }

    #[test]
    fn interpolation_error_shrinks_with_nodes() {
        let rows = interp_study(&setup(), &[10, 20]).unwrap();
        for m in 0..3 {
            let a = rows.iter().find(|r| r.n == 10 && r.m == m).unwrap();
            let b = rows.iter().find(|r| r.n == 20 && r.m == m).unwrap();
            assert!(b.true_err < a.true_err && b.estimate < a.estimate);
        }
    }

    #[test]
    fn true_bias_vanishes_in_the_limit_direction() {
        let s = setup();
        let b3 = true_bias(&s, 3).unwrap();
        let b5 = true_bias(&s, 5).unwrap();
        for m in 0..3 {
            assert!(b5[m] < b3[m] / 8.0, "m={m}: {} vs {}", b5[m], b3[m]);
        }
    }

    #[test]
    fn bias_rows_are_reproducible() {
        let a = bias_study(&setup(), 3, 10, &[50], 2, 2.0 * 2f64.ln()).unwrap();
        let b = bias_study(&setup(), 3, 10, &[50], 2, 2.0 * 2f64.ln()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn lemma_bracket_holds_on_a_small_case() {
        let row = lemma_study(&setup(), &[40, 20, 10], 8, 60, [1.0; 3]).unwrap();
        assert!(row.lower_factor * row.sum_v_over_n <= row.stat_sq, "{row:?}");
        assert!(row.stat_sq <= row.upper_factor * row.sum_v_over_n, "{row:?}");
        assert!(row.sum_v_hat_over_n > row.sum_v_over_n);
    }
}
