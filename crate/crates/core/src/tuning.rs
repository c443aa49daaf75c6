//! Rate fitting, optimal hierarchy parameters and the continuation MLMC loop.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::errors::{
    bootstrap_stat_error, check_weights, combined_mse, interp_error, level_variance, mean_diff_norm,
    naive_deriv_norms, rescale, smoothed_deriv_norms, BootstrapSettings, ErrorReport, LevelStats, MseParts,
};
use crate::estimator::{build_estimate, check_tau, PhiEstimate};
use crate::hierarchy::{derive_stream, grow_hierarchy, CostModel, Hierarchy, HierarchySummary, Model, Sampler};
use crate::kde::fourth_deriv_norm;
use crate::risk::{risk_report, RiskReport};
use crate::spline::{self, ThetaGrid};
use crate::{Error, Result};

/// `v(l) = exp(log_constant + slope · l)`, fitted by least squares on `ln v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub log_constant: f64,
    pub slope: f64,
    pub first_level: usize,
    pub last_level: usize,
}

impl RateModel {
    pub fn value(&self, level: usize) -> f64 {
        (self.log_constant + self.slope * level as f64).exp()
    }

    /// α or β for decaying quantities.
    pub fn decay_rate(&self) -> f64 {
        -self.slope
    }

    /// γ for growing quantities.
    pub fn growth_rate(&self) -> f64 {
        self.slope
    }
}

pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateModel> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("rate fit needs >= 2 points, got {}", points.len())));
    }
    if let Some((l, v)) = points.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("rate fit needs positive values, level {l} has {v}")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|(l, _)| *l as f64).sum::<f64>() / n;
    let my = points.iter().map(|(_, v)| v.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|(l, _)| (*l as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit needs at least two distinct levels"));
    }
    let sxy: f64 = points.iter().map(|(l, v)| (*l as f64 - mx) * (v.ln() - my)).sum();
    let slope = sxy / sxx;
    Ok(RateModel {
        log_constant: my - slope * mx,
        slope,
        first_level: points.iter().map(|p| p.0).min().unwrap_or(0),
        last_level: points.iter().map(|p| p.0).max().unwrap_or(0),
    })
}

/// `ε_x² = w_x ε² / 3` for interpolation, bias and statistical error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBudget {
    pub eps: f64,
    pub weights: [f64; 3],
}

impl ToleranceBudget {
    pub fn new(eps: f64, weights: [f64; 3]) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid(format!("weights must be positive, got {weights:?}")));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights must sum to 1, got {s}")));
        }
        Ok(Self { eps, weights })
    }

    fn part(&self, i: usize) -> f64 {
        self.weights[i] * self.eps * self.eps / 3.0
    }

    pub fn eps_i_sq(&self) -> f64 {
        self.part(0)
    }

    pub fn eps_b_sq(&self) -> f64 {
        self.part(1)
    }

    pub fn eps_s_sq(&self) -> f64 {
        self.part(2)
    }
}

/// Which statistic the MSE is controlled for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum StatisticKind {
    /// `Φ^(m)` itself.
    Phi(usize),
    Cdf,
    Pdf,
    Var,
    Cvar,
}

impl std::str::FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "phi0" => Self::Phi(0),
            "phi1" => Self::Phi(1),
            "phi2" => Self::Phi(2),
            "cdf" => Self::Cdf,
            "pdf" => Self::Pdf,
            "var" => Self::Var,
            "cvar" => Self::Cvar,
            _ => {
                return Err(Error::invalid(format!(
                    "unknown statistic '{s}' (expected phi0|phi1|phi2|cdf|pdf|var|cvar)"
                )))
            }
        })
    }
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Phi(m) => write!(f, "phi{m}"),
            Self::Cdf => f.write_str("cdf"),
            Self::Pdf => f.write_str("pdf"),
            Self::Var => f.write_str("var"),
            Self::Cvar => f.write_str("cvar"),
        }
    }
}

impl From<StatisticKind> for String {
    fn from(k: StatisticKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for StatisticKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn interp_lhs(k: [f64; 3], norm4: f64, theta_len: f64, n: usize) -> f64 {
    (0..3)
        .map(|m| k[m] * (spline::c1(m) * norm4).powi(2) * (theta_len / n as f64).powi(2 * (4 - m as i32)))
        .sum()
}

/// Smallest `n ≥ 4` with `‖Φ⁽⁴⁾‖² Σ k_m C1(m)² (|Θ|/n)^{2(4−m)} ≤ ε_i²`.
pub fn optimal_nodes(k: [f64; 3], norm4: f64, theta_len: f64, eps_i: f64) -> usize {
    let target = eps_i * eps_i;
    let ok = |n: usize| interp_lhs(k, norm4, theta_len, n) <= target;
    if ok(4) {
        return 4;
    }
    let mut hi = 8usize;
    while !ok(hi) {
        if hi > usize::MAX / 4 {
            return hi;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    // ok(hi) and !ok(lo)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Smallest `L ∈ [1, l_cap]` with
/// `Σ k_m c_m² e^{−2Lα_m} / (e^{α_m} − 1)² ≤ ε_b²`; the flag reports a capped result.
pub fn optimal_levels(
    bias_models: &[Option<RateModel>; 3],
    k: [f64; 3],
    eps_b: f64,
    l_cap: usize,
) -> Result<(usize, bool)> {
    let mut used = Vec::new();
    for m in 0..3 {
        if k[m] == 0.0 {
            continue;
        }
        let model = bias_models[m].ok_or(Error::NonDecayingBias { m, rate: f64::NAN })?;
        let alpha = model.decay_rate();
        if !(alpha > 0.0) {
            return Err(Error::NonDecayingBias { m, rate: alpha });
        }
        used.push((k[m], model, alpha));
    }
    let lhs = |l: usize| -> f64 {
        used.iter()
            .map(|(km, model, alpha)| km * (model.value(l) / alpha.exp_m1()).powi(2))
            .sum()
    };
    for l in 1..=l_cap.max(1) {
        if lhs(l) <= eps_b * eps_b {
            return Ok((l, false));
        }
    }
    Ok((l_cap.max(1), true))
}

/// `N_l = ⌈ε_s⁻² √(V_l/c_l) Σ_k √(V_k c_k)⌉`, at least 2.
pub fn allocate_samples(vars: &[f64], costs: &[f64], eps_s_sq: f64) -> Vec<usize> {
    let total: f64 = vars.iter().zip(costs).map(|(v, c)| (v * c).sqrt()).sum();
    vars.iter()
        .zip(costs)
        .map(|(v, c)| {
            let n = ((v / c).sqrt() * total / eps_s_sq).ceil();
            if n.is_finite() {
                (n as usize).max(2)
            } else {
                2
            }
        })
        .collect()
}

/// Sample sizes from fitted variance and cost models for levels `0..=L`.
pub fn optimal_samples(var_model: &RateModel, cost_model: &RateModel, l: usize, eps_s: f64) -> Vec<usize> {
    let vars: Vec<f64> = (0..=l).map(|i| var_model.value(i)).collect();
    let costs: Vec<f64> = (0..=l).map(|i| cost_model.value(i)).collect();
    allocate_samples(&vars, &costs, eps_s * eps_s)
}

/// Inputs of the continuation algorithm.
#[derive(Clone, Debug)]
pub struct CmlmcConfig {
    pub model: Arc<dyn Model>,
    pub cost_model: CostModel,
    pub seed: u64,
    pub tau: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub eps: f64,
    /// `(w_i, w_b, w_s)`.
    pub weights: [f64; 3],
    pub d: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub screening_levels: usize,
    pub screening_samples: usize,
    pub initial_nodes: usize,
    pub max_nodes: usize,
    pub bootstrap: BootstrapSettings,
    pub n_fine: usize,
    /// Samples of the level used for the fourth-derivative estimate are
    /// truncated to this many (the first ones drawn).
    pub kde_max_samples: usize,
    pub l_cap: usize,
    pub max_iterations: usize,
}

impl CmlmcConfig {
    pub fn new(model: Arc<dyn Model>) -> Self {
        let l_cap = model.max_level().min(10);
        Self {
            model,
            cost_model: CostModel::Theoretical,
            seed: 0,
            tau: 0.7,
            theta_min: 1.5,
            theta_max: 2.5,
            eps: 0.05,
            weights: [0.1, 0.3, 0.6],
            d: 3,
            lambda: 1.5,
            kappa: 1.1,
            screening_levels: 3,
            screening_samples: 25,
            initial_nodes: 10,
            max_nodes: 1000,
            bootstrap: BootstrapSettings::default(),
            n_fine: 1000,
            kde_max_samples: 4000,
            l_cap,
            max_iterations: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        ThetaGrid::new(self.theta_min, self.theta_max, self.initial_nodes.max(4))?;
        ToleranceBudget::new(self.eps, self.weights)?;
        let bad = |msg: &str| Err(Error::invalid(msg.to_string()));
        if !(self.lambda > self.kappa && self.kappa > 1.0) {
            return bad("tolerance ratios must satisfy lambda > kappa > 1");
        }
        if self.screening_levels < 3 {
            return bad("screening needs at least 3 levels for rate fits");
        }
        if self.screening_samples < 2 {
            return bad("screening needs at least 2 samples per level");
        }
        if self.initial_nodes < 4 || self.max_nodes < self.initial_nodes {
            return bad("node counts must satisfy 4 <= initial_nodes <= max_nodes");
        }
        if self.n_fine < 7 {
            return bad("n_fine must be at least 7");
        }
        if self.kde_max_samples < 2 {
            return bad("kde_max_samples must be at least 2");
        }
        if self.l_cap + 1 < self.screening_levels || self.l_cap > self.model.max_level() {
            return bad("l_cap must cover the screening levels and not exceed the model's deepest level");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if self.bootstrap.initial < 2 || self.bootstrap.cap < self.bootstrap.initial || self.bootstrap.n_fine < 2 {
            return bad("bootstrap settings must satisfy 2 <= initial <= cap");
        }
        Ok(())
    }

    /// `ε_a` at iteration `j` (0-based).
    pub fn tolerance_at(&self, j: usize) -> f64 {
        let e = self.d as i32 - j as i32;
        if j <= self.d {
            self.eps * self.lambda.powi(e)
        } else {
            self.eps * self.kappa.powi(e)
        }
    }
}

/// Fitted rates of one analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Bias decay per derivative order.
    pub bias: [Option<RateModel>; 3],
    pub variance: Option<RateModel>,
    pub cost: Option<RateModel>,
}

/// One continuation step, as reported in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// `None` for the screening step.
    pub iteration: Option<usize>,
    pub eps_a: f64,
    pub nodes: usize,
    pub finest_level: usize,
    pub sizes: Vec<usize>,
    pub k: [f64; 3],
    pub mse: MseParts,
    pub var_hat: f64,
    pub cvar_hat: f64,
    pub cost: f64,
    pub n_bootstrap: usize,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub estimate: PhiEstimate,
    pub risk: RiskReport,
    pub errors: ErrorReport,
    pub mse: MseParts,
    pub rates: Rates,
    pub hierarchy: Hierarchy,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per trace entry; excluded from determinism checks.
    pub seconds: Vec<f64>,
}

impl RunResult {
    pub fn total_cost(&self) -> f64 {
        self.hierarchy.total_cost()
    }

    pub fn hierarchy_summary(&self) -> HierarchySummary {
        self.hierarchy.summary()
    }
}

struct Analysis {
    estimate: PhiEstimate,
    risk: RiskReport,
    report: ErrorReport,
    mse: MseParts,
    rates: Rates,
}

fn fit_positive(points: impl IntoIterator<Item = (usize, f64)>) -> Option<RateModel> {
    let pts: Vec<(usize, f64)> = points.into_iter().filter(|(_, v)| *v > 0.0 && v.is_finite()).collect();
    fit_rate(&pts).ok()
}

fn analyse(
    h: &Hierarchy,
    grid: &ThetaGrid,
    cfg: &CmlmcConfig,
    kind: StatisticKind,
    eps_s_sq: f64,
    boot_seed: u64,
    warnings: &mut Vec<String>,
) -> Result<Analysis> {
    let tau = cfg.tau;
    let finest = h.finest().ok_or_else(|| Error::invalid("empty hierarchy"))?;
    let estimate = build_estimate(h, grid, tau)?;
    let risk = risk_report(&estimate, kind, cfg.n_fine)?;
    let k = risk.k;
    check_weights(k)?;

    let mut levels = Vec::with_capacity(h.levels.len());
    for ls in &h.levels {
        let (naive, new) = if ls.level == 0 {
            (None, None)
        } else {
            let norms = match smoothed_deriv_norms(ls, grid, tau, cfg.n_fine) {
                Ok(n) => n,
                Err(Error::Degenerate(why)) => {
                    warnings.push(format!("level {}: kernel smoothing skipped ({why})", ls.level));
                    naive_deriv_norms(ls, grid, tau, cfg.n_fine)?
                }
                Err(e) => return Err(e),
            };
            (Some(mean_diff_norm(ls, grid, tau)?), Some(norms))
        };
        levels.push(LevelStats {
            level: ls.level,
            samples: ls.count(),
            v_hat: level_variance(ls, grid, tau),
            diff_norm_naive: naive,
            diff_norm_new: new,
            cost: ls.per_sample_cost(),
        });
    }

    let bias_models = [0, 1, 2].map(|m| {
        fit_positive(levels.iter().filter_map(|s| s.diff_norm_new.map(|b| (s.level, b[m]))))
    });
    let variance = fit_positive(levels.iter().skip(1).map(|s| (s.level, s.v_hat)));
    let cost = fit_positive(levels.iter().skip(1).map(|s| (s.level, s.cost)));
    let last = levels[finest].diff_norm_new.expect("finest level is >= 1");
    let bias = [0, 1, 2].map(|m| {
        bias_models[m]
            .map(|r| r.decay_rate())
            .filter(|a| *a > 0.0)
            .map(|a| last[m] / a.exp_m1())
    });
    for m in 0..3 {
        if k[m] > 0.0 && bias[m].is_none() {
            let rate = bias_models[m].map_or(f64::NAN, |r| r.decay_rate());
            return Err(Error::NonDecayingBias { m, rate });
        }
    }

    let kde_level = finest.div_ceil(2);
    let mut centers = h.levels[kde_level].fine_values();
    centers.truncate(cfg.kde_max_samples);
    let norm4 = fourth_deriv_norm(&centers, grid, tau, cfg.n_fine)?;
    let interp = [0, 1, 2].map(|m| interp_error(norm4, grid.n, m, grid.length()));

    let boot = bootstrap_stat_error(h, grid, tau, k, eps_s_sq, &cfg.bootstrap, boot_seed)?;
    if boot.capped {
        warnings.push(format!(
            "bootstrap stopped at the cap of {} replicates (standard error {:.3e})",
            boot.n_bootstrap, boot.std_error
        ));
    }
    let v_hats: Vec<f64> = levels.iter().map(|s| s.v_hat).collect();
    let (r_e, v_tilde) = rescale(&v_hats, &h.sizes(), boot.stat, k)?;

    let report = ErrorReport {
        interp,
        bias,
        stat: boot.stat,
        rescale_ratio: r_e,
        v_tilde,
        n_bootstrap: boot.n_bootstrap,
        bootstrap_capped: boot.capped,
        norm4,
        levels,
    };
    let mse = combined_mse(k, &report)?;
    Ok(Analysis { estimate, risk, report, mse, rates: Rates { bias: bias_models, variance, cost } })
}

fn record(iteration: Option<usize>, eps_a: f64, h: &Hierarchy, a: &Analysis) -> IterationRecord {
    IterationRecord {
        iteration,
        eps_a,
        nodes: a.estimate.grid.n,
        finest_level: h.finest().unwrap_or(0),
        sizes: h.sizes(),
        k: a.risk.k,
        mse: a.mse,
        var_hat: a.risk.var_hat,
        cvar_hat: a.risk.cvar_hat,
        cost: h.total_cost(),
        n_bootstrap: a.report.n_bootstrap,
    }
}

/// Continuation MLMC.
///
/// A screening hierarchy seeds the level-wise estimates. Each iteration
/// then picks `n*`, `L*` and `N_l*` for the tolerance `ε_a`, grows the
/// hierarchy (samples are reused) and re-estimates every error component.
/// The loop runs while `j ≤ d` or the estimated MSE is at least `ε²`.
/// `ε_a = ε λ^{d−j}` for `j ≤ d`, then `ε κ^{d−j}`.
pub fn cmlmc_run(cfg: &CmlmcConfig, statistic: StatisticKind) -> Result<RunResult> {
    cfg.validate()?;
    let sampler = Sampler::new(cfg.model.clone(), cfg.seed, cfg.cost_model);
    let mut warnings = Vec::new();
    let mut seconds = Vec::new();
    let mut trace = Vec::new();

    let t0 = Instant::now();
    let screen_l = cfg.screening_levels - 1;
    let mut h = grow_hierarchy(Hierarchy::new(), &vec![cfg.screening_samples; cfg.screening_levels], screen_l, &sampler)?;
    let mut grid = ThetaGrid::new(cfg.theta_min, cfg.theta_max, cfg.initial_nodes)?;
    let eps0 = cfg.tolerance_at(0);
    let budget0 = ToleranceBudget::new(eps0, cfg.weights)?;
    let mut a = analyse(&h, &grid, cfg, statistic, budget0.eps_s_sq(), derive_stream(cfg.seed, 0), &mut warnings)?;
    trace.push(record(None, eps0, &h, &a));
    seconds.push(t0.elapsed().as_secs_f64());

    let mut j = 0usize;
    let converged = loop {
        if j > cfg.d && a.mse.total < cfg.eps * cfg.eps {
            break true;
        }
        if j >= cfg.max_iterations {
            break false;
        }
        let t = Instant::now();
        let eps_a = cfg.tolerance_at(j);
        let budget = ToleranceBudget::new(eps_a, cfg.weights)?;
        let k = a.risk.k;

        let mut n_star = optimal_nodes(k, a.report.norm4, grid.length(), budget.eps_i_sq().sqrt());
        if n_star > cfg.max_nodes {
            warnings.push(format!("iteration {j}: n*={n_star} capped at {}", cfg.max_nodes));
            n_star = cfg.max_nodes;
        }
        let (l_star, capped) = optimal_levels(&a.rates.bias, k, budget.eps_b_sq().sqrt(), cfg.l_cap)?;
        if capped {
            warnings.push(format!("iteration {j}: L* capped at {}", cfg.l_cap));
        }
        let current = h.finest().unwrap_or(0);
        let l_new = l_star.max(current);

        // Level 0 is a plain MC term, not a difference; the level models are
        // fitted on l >= 1 and would misjudge it, so it keeps its raw values.
        let r_e = a.report.rescale_ratio;
        let mut vars = Vec::with_capacity(l_new + 1);
        let mut costs = Vec::with_capacity(l_new + 1);
        for l in 0..=l_new {
            if l == 0 {
                vars.push(a.report.v_tilde[0]);
                costs.push(sampler.pair_cost(0).max(a.report.levels[0].cost));
                continue;
            }
            let v = match a.rates.variance {
                Some(m) => r_e * m.value(l),
                None if l <= current => a.report.v_tilde[l],
                None => return Err(Error::Numerical("no variance model to extrapolate levels".into())),
            };
            let c = match (cfg.cost_model, a.rates.cost) {
                (CostModel::Theoretical, _) => sampler.pair_cost(l),
                (CostModel::Measured, Some(m)) => m.value(l),
                (CostModel::Measured, None) if l <= current => a.report.levels[l].cost,
                (CostModel::Measured, None) => sampler.pair_cost(l),
            };
            vars.push(v);
            costs.push(c);
        }
        let sizes = allocate_samples(&vars, &costs, budget.eps_s_sq());
        h = grow_hierarchy(h, &sizes, l_new, &sampler)?;
        grid = grid.with_nodes(n_star)?;
        a = analyse(&h, &grid, cfg, statistic, budget.eps_s_sq(), derive_stream(cfg.seed, j as u64 + 1), &mut warnings)?;
        trace.push(record(Some(j), eps_a, &h, &a));
        seconds.push(t.elapsed().as_secs_f64());
        j += 1;
    };

    for w in &warnings {
        log::warn!("{w}");
    }
    let result = RunResult {
        estimate: a.estimate,
        risk: a.risk,
        errors: a.report,
        mse: a.mse,
        rates: a.rates,
        hierarchy: h,
        trace,
        converged,
        warnings,
        seconds,
    };
    if converged {
        Ok(result)
    } else {
        Err(Error::IterationCap { cap: cfg.max_iterations, partial: Box::new(result) })
    }
}
