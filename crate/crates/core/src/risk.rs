//! Post-processing of an interpolated `Φ̂` into VaR, CVaR, CDF and PDF, and
//! the weights that map derivative errors onto each statistic.

use serde::{Deserialize, Serialize};

use crate::estimator::{build_estimate, check_tau, PhiEstimate};
use crate::hierarchy::Hierarchy;
use crate::spline::{piece_deriv, uniform_points, SplineCurve, ThetaGrid};
use crate::tuning::StatisticKind;
use crate::{Error, Result};

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    // a t² + b t + c = 0
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / b] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    let mut r = vec![q / a, c / q];
    r.sort_by(f64::total_cmp);
    r
}

/// Exact global minimiser of the piecewise cubic over Θ, ties going to the
/// smallest θ.
pub fn var_from_curve(curve: &SplineCurve) -> f64 {
    let grid = curve.grid();
    let h = grid.spacing();
    let mut best = (f64::INFINITY, grid.theta_min);
    let pieces = curve.pieces();
    for (j, p) in pieces.iter().enumerate() {
        let origin = grid.node(j);
        let mut ts = vec![0.0];
        let [_, b, c, d] = *p;
        ts.extend(quadratic_roots(3.0 * d, 2.0 * c, b).into_iter().filter(|t| *t > 0.0 && *t < h));
        if j + 1 == pieces.len() {
            ts.push(h);
        }
        for t in ts {
            let v = piece_deriv(p, 0, t);
            if v < best.0 {
                let theta = if t == h { grid.theta_max } else { origin + t };
                best = (v, theta);
            }
        }
    }
    best.1
}

/// `Φ̂(q̂)`.
pub fn cvar_from_curve(curve: &SplineCurve) -> f64 {
    curve.eval_unchecked(0, var_from_curve(curve))
}

/// `F̂ = τ + (1−τ) Φ̂′` and `f̂ = (1−τ) Φ̂″` on `n_fine` points of Θ.
pub fn cdf_pdf_curves(curve: &SplineCurve, tau: f64, n_fine: usize) -> (Vec<f64>, Vec<f64>) {
    let g = curve.grid();
    uniform_points(g.theta_min, g.theta_max, n_fine)
        .into_iter()
        .map(|x| {
            (
                tau + (1.0 - tau) * curve.eval_unchecked(1, x),
                (1.0 - tau) * curve.eval_unchecked(2, x),
            )
        })
        .unzip()
}

/// Weights `(k0, k1, k2)` with `MSE(statistic) ≈ Σ k_m MSE(Φ̂^(m))`.
pub fn stat_weights(kind: StatisticKind, curve: &SplineCurve, q_hat: f64, tau: f64) -> Result<[f64; 3]> {
    check_tau(tau)?;
    let second = || {
        let s2 = curve.eval_unchecked(2, q_hat);
        if s2 == 0.0 {
            Err(Error::Numerical(format!("Φ̂″(q̂) = 0 at q̂ = {q_hat}; density degenerate")))
        } else {
            Ok(s2)
        }
    };
    let w = (1.0 - tau) * (1.0 - tau);
    Ok(match kind {
        StatisticKind::Phi(m) => {
            let mut k = [0.0; 3];
            *k.get_mut(m).ok_or_else(|| Error::invalid(format!("derivative order {m} exceeds 2")))? = 1.0;
            k
        }
        StatisticKind::Cdf => [0.0, w, 0.0],
        StatisticKind::Pdf => [0.0, 0.0, w],
        StatisticKind::Var => [0.0, 1.0 / second()?.powi(2), 0.0],
        StatisticKind::Cvar => {
            let s2 = second()?;
            // An interior minimiser is a stationary point of the spline, so
            // Φ̂′(q̂) is zero up to rounding there.
            let g = curve.grid();
            let interior = q_hat > g.theta_min && q_hat < g.theta_max;
            let s1 = if interior { 0.0 } else { curve.eval_unchecked(1, q_hat) };
            [2.0, 2.0 * s1 * s1 / (s2 * s2), 0.0]
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub tau: f64,
    pub statistic: StatisticKind,
    pub var_hat: f64,
    pub cvar_hat: f64,
    /// Weights used for the statistic's MSE.
    pub k: [f64; 3],
    pub theta: Vec<f64>,
    /// Raw `F̂`; may leave [0, 1] through estimation noise.
    pub cdf: Vec<f64>,
    pub cdf_clipped: Vec<f64>,
    pub pdf: Vec<f64>,
}

pub fn risk_report(est: &PhiEstimate, kind: StatisticKind, n_fine: usize) -> Result<RiskReport> {
    let q = var_from_curve(&est.curve);
    let k = stat_weights(kind, &est.curve, q, est.tau)?;
    let (cdf, pdf) = cdf_pdf_curves(&est.curve, est.tau, n_fine);
    Ok(RiskReport {
        tau: est.tau,
        statistic: kind,
        var_hat: q,
        cvar_hat: est.curve.eval_unchecked(0, q),
        k,
        theta: uniform_points(est.grid.theta_min, est.grid.theta_max, n_fine),
        cdf_clipped: cdf.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        cdf,
        pdf,
    })
}

/// VaR re-estimated on a narrower interval from the same samples.
pub fn refine_var(h: &Hierarchy, theta_min: f64, theta_max: f64, n: usize, tau: f64) -> Result<f64> {
    let grid = ThetaGrid::new(theta_min, theta_max, n)?;
    Ok(var_from_curve(&build_estimate(h, &grid, tau)?.curve))
}
