//! The four subcommands. Each reads validated [`Settings`], runs, and
//! writes its files into the output directory.

use std::path::Path;

use mlmc_risk::risk::refine_var;
use mlmc_risk::{cmlmc_run, Error, StatisticKind};

use crate::config::{read_reference_file, ModelSpec, Reference, Settings};
use crate::output::{curve_rows, metadata, write_csv, ResultFile};
use crate::studies::{self, loglog_slope, CompareSetup};

/// Why a command did not finish normally.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or an unsupported request. Exit code 1.
    Config(String),
    /// Numerical failure inside the algorithms. Exit code 3.
    Numerical(String),
    /// File system trouble. Exit code 3.
    Io(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) | Failure::Io(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(format!("{e:#}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn numerical(e: Error) -> Failure {
    match e {
        Error::InvalidInput(m) => Failure::Config(m),
        other => Failure::Numerical(other.to_string()),
    }
}

/// Normal completion: tolerance met (exit 0) or not (exit 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Completion {
    Done,
    ToleranceNotMet,
}

impl Completion {
    pub fn exit_code(self) -> i32 {
        match self {
            Completion::Done => 0,
            Completion::ToleranceNotMet => 2,
        }
    }
}

pub type Outcome = Result<Completion, Failure>;

/// One CMLMC run: `result.json` and `curves.csv`.
pub fn cmd_estimate(settings: &Settings, out: &Path) -> Outcome {
    std::fs::create_dir_all(out)?;
    let (run, completion) = match cmlmc_run(&settings.cmlmc, settings.statistic) {
        Ok(r) => (r, Completion::Done),
        Err(Error::IterationCap { cap, partial }) => {
            log::warn!("iteration cap {cap} reached; writing the partial result");
            (*partial, Completion::ToleranceNotMet)
        }
        Err(e) => return Err(numerical(e)),
    };
    let refined = match settings.var_refine {
        Some(v) => Some(refine_var(&run.hierarchy, v.theta_min, v.theta_max, v.nodes, settings.cmlmc.tau).map_err(numerical)?),
        None => None,
    };
    let doc = ResultFile::new(settings, &run, refined);
    let json = doc.to_json().map_err(|e| Failure::Numerical(format!("cannot serialise result: {e}")))?;
    std::fs::write(out.join("result.json"), json)?;
    write_csv(&out.join("curves.csv"), &metadata(settings, "estimate"), &curve_rows(&run))?;
    log::info!(
        "VaR={:.6} CVaR={:.6} MSE={:.3e} cost={:.3e}",
        run.risk.var_hat,
        run.risk.cvar_hat,
        run.mse.total,
        run.total_cost()
    );
    Ok(completion)
}

/// The reference value of the configured statistic.
pub fn reference_value(settings: &Settings) -> Result<f64, Failure> {
    let (want_var, name) = match settings.statistic {
        StatisticKind::Var => (true, "var"),
        StatisticKind::Cvar => (false, "cvar"),
        other => return Err(Failure::Config(format!("no reference available for statistic `{other}`"))),
    };
    match &settings.study.reference {
        Reference::Exact => {
            let (q, c) = settings.model.exact_var_cvar(settings.cmlmc.tau).map_err(numerical)?;
            Ok(if want_var { q } else { c })
        }
        Reference::File(p) => {
            let (q, c) = read_reference_file(Path::new(p)).map_err(|e| Failure::Config(e.to_string()))?;
            let v = if want_var { q } else { c };
            v.ok_or_else(|| Failure::Config(format!("reference file {p} has no `{name}` entry")))
        }
    }
}

/// Repeated runs per tolerance against the reference: `reliability.csv`.
pub fn cmd_reliability(settings: &Settings, out: &Path) -> Outcome {
    let reference = reference_value(settings)?;
    std::fs::create_dir_all(out)?;
    let s = &settings.study;
    let outcomes = studies::run_repetitions(&settings.cmlmc, settings.statistic, &s.tolerances, s.repetitions);
    let rows = studies::reliability_rows(&outcomes, settings.statistic, reference);
    let mut meta = metadata(settings, "reliability");
    meta.push(("reference".into(), reference.to_string()));
    write_csv(&out.join("reliability.csv"), &meta, &rows)?;
    for &tol in &s.tolerances {
        let ok: Vec<_> = rows.iter().filter(|r| r.tolerance == tol && r.true_sq_err.is_finite()).collect();
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        let mse = ok.iter().map(|r| r.est_mse).sum::<f64>() / n;
        let err = ok.iter().map(|r| r.true_sq_err).sum::<f64>() / n;
        let bounded = ok.iter().filter(|r| r.true_sq_err <= r.est_mse).count();
        log::info!("eps={tol}: {bounded}/{} bounded, mean est MSE / mean sq err = {:.2}", ok.len(), mse / err);
    }
    Ok(Completion::Done)
}

/// Mean cost per tolerance and the Monte Carlo baseline: `complexity.csv`.
pub fn cmd_complexity(settings: &Settings, out: &Path) -> Outcome {
    std::fs::create_dir_all(out)?;
    let s = &settings.study;
    let outcomes = studies::run_repetitions(&settings.cmlmc, settings.statistic, &s.tolerances, s.repetitions);
    let rows = studies::complexity_rows(&outcomes, settings.cmlmc.model.as_ref(), settings.cmlmc.weights);
    let mut meta = metadata(settings, "complexity");
    if rows.len() >= 2 {
        let tol: Vec<f64> = rows.iter().map(|r| r.tolerance).collect();
        let ml: Vec<f64> = rows.iter().map(|r| r.mean_mlmc_cost).collect();
        let mc: Vec<f64> = rows.iter().map(|r| r.mc_cost_estimate).collect();
        meta.push(("mlmc_slope".into(), format!("{:.4}", loglog_slope(&tol, &ml))));
        meta.push(("mc_slope".into(), format!("{:.4}", loglog_slope(&tol, &mc))));
    }
    write_csv(&out.join("complexity.csv"), &meta, &rows)?;
    Ok(Completion::Done)
}

/// Interpolation, bias and statistical error estimators against exact or
/// brute-force references (Poisson model only).
pub fn cmd_compare_estimators(settings: &Settings, out: &Path) -> Outcome {
    if settings.model != (ModelSpec::Poisson { forcing: 432.0 }) {
        return Err(Failure::Config(
            "compare-estimators needs the Poisson model with the default forcing (exact Φ required)".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let c = &settings.compare;
    let setup = CompareSetup {
        tau: settings.cmlmc.tau,
        theta_min: settings.cmlmc.theta_min,
        theta_max: settings.cmlmc.theta_max,
        n_fine: settings.cmlmc.n_fine,
        seed: settings.seed(),
    };
    // Second-order scheme: the bias halves twice per level.
    let alpha = 2.0 * std::f64::consts::LN_2;
    let meta = |what: &str| {
        let mut m = metadata(settings, "compare-estimators");
        m.push(("study".into(), what.into()));
        m
    };

    log::info!("interpolation study");
    let interp = studies::interp_study(&setup, &c.interp_nodes).map_err(numerical)?;
    write_csv(&out.join("est_compare_interp.csv"), &meta("interp"), &interp)?;

    log::info!("bias study over sample sizes");
    let bias = studies::bias_study(&setup, c.bias_level, c.nodes, &c.bias_samples, c.repetitions, alpha).map_err(numerical)?;
    write_csv(&out.join("est_compare_bias.csv"), &meta("bias"), &bias)?;

    log::info!("bias study over levels");
    let (decay, rates) =
        studies::bias_decay_study(&setup, c.decay_levels, c.nodes, c.decay_samples, c.repetitions, alpha).map_err(numerical)?;
    write_csv(&out.join("est_compare_bias_decay.csv"), &meta("bias_decay"), &decay)?;
    write_csv(&out.join("est_compare_bias_rates.csv"), &meta("bias_rates"), &rates)?;

    log::info!("statistical error study");
    let stat = studies::stat_study(
        &setup,
        c.stat_levels,
        c.nodes,
        &c.stat_n0,
        &c.stat_r,
        settings.study.n_ref,
        c.stat_bootstrap,
    )
    .map_err(numerical)?;
    write_csv(&out.join("est_compare_stat.csv"), &meta("stat"), &stat)?;

    log::info!("statistical error bracket");
    let lemma = studies::lemma_study(&setup, &c.lemma_sizes, c.nodes, c.lemma_repetitions, [1.0; 3]).map_err(numerical)?;
    write_csv(&out.join("est_compare_lemma.csv"), &meta("lemma"), &[lemma])?;
    Ok(Completion::Done)
}
