//! File emission: CSV tables with a `# key=value` metadata block and the
//! `result.json` document.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use mlmc_risk::hierarchy::HierarchySummary;
use mlmc_risk::tuning::Rates;
use mlmc_risk::{ErrorReport, IterationRecord, MseParts, RiskReport, RunResult};
use serde::{Deserialize, Serialize};

use crate::config::Settings;

pub const RESULT_FORMAT: &str = "mlmc-risk-result/1";

/// Metadata lines written ahead of every CSV header.
pub fn metadata(settings: &Settings, command: &str) -> Vec<(String, String)> {
    vec![
        ("command".into(), command.into()),
        ("config_hash".into(), settings.hash()),
        ("seed".into(), settings.seed().to_string()),
        ("model".into(), settings.model.name().into()),
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
    ]
}

/// Writes `rows` as CSV after the metadata block.
pub fn write_csv<T: Serialize>(path: &Path, meta: &[(String, String)], rows: &[T]) -> anyhow::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in meta {
        writeln!(file, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub theta: f64,
    pub phi: f64,
    pub dphi: f64,
    pub d2phi: f64,
    pub cdf: f64,
    pub cdf_clipped: f64,
    pub pdf: f64,
}

pub fn curve_rows(run: &RunResult) -> Vec<CurveRow> {
    let c = &run.estimate.curve;
    run.risk
        .theta
        .iter()
        .enumerate()
        .map(|(i, &t)| CurveRow {
            theta: t,
            phi: c.eval_unchecked(0, t),
            dphi: c.eval_unchecked(1, t),
            d2phi: c.eval_unchecked(2, t),
            cdf: run.risk.cdf[i],
            cdf_clipped: run.risk.cdf_clipped[i],
            pdf: run.risk.pdf[i],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub tau: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub nodes: Vec<f64>,
    pub pointwise: Vec<f64>,
}

/// Wall-clock data, kept apart so determinism checks can drop it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

/// The `result.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub format: String,
    pub meta: Meta,
    pub config: BTreeMap<String, String>,
    pub converged: bool,
    pub estimate: EstimateSummary,
    pub risk: RiskReport,
    /// VaR re-estimated on the narrower interval, when configured.
    pub var_refined: Option<f64>,
    pub mse: MseParts,
    pub errors: ErrorReport,
    pub rates: Rates,
    pub hierarchy: HierarchySummary,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl ResultFile {
    pub fn new(settings: &Settings, run: &RunResult, var_refined: Option<f64>) -> Self {
        Self {
            format: RESULT_FORMAT.into(),
            meta: Meta {
                config_hash: settings.hash(),
                seed: settings.seed(),
                model: settings.model.name().into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            config: settings.effective.clone(),
            converged: run.converged,
            estimate: EstimateSummary {
                tau: run.estimate.tau,
                theta_min: run.estimate.grid.theta_min,
                theta_max: run.estimate.grid.theta_max,
                nodes: run.estimate.grid.nodes(),
                pointwise: run.estimate.pointwise.clone(),
            },
            risk: run.risk.clone(),
            var_refined,
            mse: run.mse,
            errors: run.errors.clone(),
            rates: run.rates.clone(),
            hierarchy: run.hierarchy_summary(),
            trace: run.trace.clone(),
            warnings: run.warnings.clone(),
            timing: Timing { total_seconds: run.seconds.iter().sum(), iteration_seconds: run.seconds.clone() },
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// `result.json` text with the timing subtree removed.
pub fn without_timing(json: &str) -> serde_json::Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string_pretty(&v)
}
