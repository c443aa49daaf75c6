//! Built-in models: a random 2D Poisson problem and Black-Scholes GBM.
//!
//! Both come with exact references so the estimators can be checked against
//! the truth.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::hierarchy::Model;
use crate::kde::norm_cdf;
use crate::{Error, Result};

/// Deepest Poisson level; level 9 already has ~6.5M unknowns.
pub const POISSON_MAX_LEVEL: usize = 9;

static UNIT_FACTORS: [OnceLock<f64>; POISSON_MAX_LEVEL + 1] =
    [const { OnceLock::new() }; POISSON_MAX_LEVEL + 1];

/// Interior points per dimension at `level`: `5·2^l − 2`.
pub fn poisson_interior(level: usize) -> usize {
    5 * (1 << level) - 2
}

/// Spatial average of the discrete solution of `−Δu = −(x² + y² − x − y)`
/// with zero Dirichlet data, i.e. the level factor for unit forcing.
fn solve_unit_factor(level: usize) -> Result<f64> {
    let m = poisson_interior(level);
    let h = 1.0 / (m + 1) as f64;
    let size = m * m;
    // Scaled system: (4u_k − Σ neighbours) = h² f_k.
    let mut b = vec![0.0; size];
    for i in 0..m {
        let y = (i + 1) as f64 * h;
        for j in 0..m {
            let x = (j + 1) as f64 * h;
            b[i * m + j] = -h * h * (x * x + y * y - x - y);
        }
    }
    let apply = |p: &[f64], out: &mut [f64]| {
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                let mut s = 4.0 * p[k];
                if i > 0 {
                    s -= p[k - m];
                }
                if i + 1 < m {
                    s -= p[k + m];
                }
                if j > 0 {
                    s -= p[k - 1];
                }
                if j + 1 < m {
                    s -= p[k + 1];
                }
                out[k] = s;
            }
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // The Jacobi preconditioner is the constant 1/4 here, which only rescales
    // the step lengths, so plain CG is equivalent.
    let mut u = vec![0.0; size];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; size];
    let mut rr = dot(&r, &r);
    let target = 1e-12 * rr.sqrt();
    let max_iter = 20 * m + 100;
    let mut converged = rr.sqrt() <= target;
    for _ in 0..max_iter {
        if converged {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..size {
            u[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        converged = rr_new.sqrt() <= target;
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..size {
            p[k] = r[k] + beta * p[k];
        }
    }
    if !converged {
        return Err(Error::Numerical(format!("CG did not converge at Poisson level {level}")));
    }
    // Trapezoid average; the boundary contributes zeros.
    Ok(h * h * u.iter().sum::<f64>())
}

fn unit_factor(level: usize) -> Result<f64> {
    let cell = UNIT_FACTORS
        .get(level)
        .ok_or_else(|| Error::invalid(format!("Poisson level {level} > {POISSON_MAX_LEVEL}")))?;
    if let Some(v) = cell.get() {
        return Ok(*v);
    }
    let v = solve_unit_factor(level)?;
    Ok(*cell.get_or_init(|| v))
}

/// Random Poisson problem `−Δu = −C ξ (x² + y² − x − y)` on the unit square,
/// `ξ ~ Beta(2, 6)`. The QoI is the spatial mean of `u`, equal to `C ξ / 72`
/// in the continuum limit.
#[derive(Clone, Debug)]
pub struct PoissonModel {
    pub forcing: f64,
    gamma2: Gamma<f64>,
    gamma6: Gamma<f64>,
}

impl Default for PoissonModel {
    fn default() -> Self {
        Self::new(432.0).expect("default forcing is valid")
    }
}

impl PoissonModel {
    pub fn new(forcing: f64) -> Result<Self> {
        if !(forcing > 0.0 && forcing.is_finite()) {
            return Err(Error::invalid(format!("forcing constant must be positive, got {forcing}")));
        }
        Ok(Self {
            forcing,
            gamma2: Gamma::new(2.0, 1.0).expect("valid gamma"),
            gamma6: Gamma::new(6.0, 1.0).expect("valid gamma"),
        })
    }

    /// QoI at `level` for `ξ = 1`.
    pub fn factor(&self, level: usize) -> Result<f64> {
        Ok(self.forcing * unit_factor(level)?)
    }

    /// `ξ ~ Beta(2, 6)` as `X / (X + Y)` with `X ~ Γ(2)`, `Y ~ Γ(6)`.
    pub fn beta26_sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = self.gamma2.sample(rng);
        let y = self.gamma6.sample(rng);
        x / (x + y)
    }

    pub fn pair(&self, level: usize, xi: f64) -> Result<(f64, Option<f64>)> {
        let fine = self.factor(level)? * xi;
        let coarse = if level == 0 {
            None
        } else {
            Some(self.factor(level - 1)? * xi)
        };
        Ok((fine, coarse))
    }
}

/// The default-forcing level factor `q_l` (tends to 6).
pub fn poisson_factor(level: usize) -> Result<f64> {
    PoissonModel::default().factor(level)
}

impl Model for PoissonModel {
    fn name(&self) -> &str {
        "poisson"
    }

    fn sample(&self, level: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Option<f64>)> {
        let xi = self.beta26_sample(rng);
        self.pair(level, xi)
    }

    fn unit_cost(&self, level: usize) -> f64 {
        (poisson_interior(level) * poisson_interior(level)) as f64
    }

    fn max_level(&self) -> usize {
        POISSON_MAX_LEVEL
    }

    fn exact_var_cvar(&self, tau: f64) -> Option<Result<(f64, f64)>> {
        (self.forcing == 432.0).then(|| poisson_var_cvar_exact(tau))
    }

    fn exact_phi(&self, theta: f64, tau: f64) -> Option<f64> {
        if self.forcing == 432.0 {
            poisson_phi_exact(theta, tau).ok()
        } else {
            None
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// k-th derivative of `Φ(θ) = θ − (θ−6)⁷(θ+2) / (373248 (1−τ))` for
/// `Q = 6ξ`, `ξ ~ Beta(2, 6)`; valid on `[0, 6]`.
pub fn poisson_phi_deriv(theta: f64, tau: f64, k: usize) -> Result<f64> {
    check_tau(tau)?;
    if !(0.0..=6.0).contains(&theta) {
        return Err(Error::invalid(format!("theta={theta} outside [0, 6]")));
    }
    let u = theta - 6.0;
    // (θ−6)⁷(θ+2) = u⁸ + 8u⁷ and its derivatives.
    let p = match k {
        0 => u.powi(8) + 8.0 * u.powi(7),
        1 => 8.0 * u.powi(7) + 56.0 * u.powi(6),
        2 => 56.0 * u.powi(6) + 336.0 * u.powi(5),
        3 => 336.0 * u.powi(5) + 1680.0 * u.powi(4),
        4 => 1680.0 * u.powi(4) + 6720.0 * u.powi(3),
        _ => return Err(Error::invalid(format!("derivative order {k} not provided"))),
    };
    let lin = match k {
        0 => theta,
        1 => 1.0,
        _ => 0.0,
    };
    Ok(lin - p / (373_248.0 * (1.0 - tau)))
}

pub fn poisson_phi_exact(theta: f64, tau: f64) -> Result<f64> {
    poisson_phi_deriv(theta, tau, 0)
}

/// Exact k-th derivative of `Φ_l` for the level-l QoI `Q_l = q_l ξ`.
pub fn poisson_level_phi_deriv(theta: f64, tau: f64, q_l: f64, k: usize) -> Result<f64> {
    check_tau(tau)?;
    if theta >= q_l {
        return Ok(match k {
            0 => theta,
            1 => 1.0,
            _ => 0.0,
        });
    }
    // Φ_l(θ) = θ + (q_l/6)(Φ(s) − s) with s = 6θ/q_l.
    let scale = 6.0 / q_l;
    let s = scale * theta;
    let inner = poisson_phi_deriv(s, tau, k)? - if k == 0 { s } else if k == 1 { 1.0 } else { 0.0 };
    let lin = match k {
        0 => theta,
        1 => 1.0,
        _ => 0.0,
    };
    Ok(lin + scale.powi(k as i32) * inner / scale)
}

/// Exact `(q_τ, c_τ)` for the limiting Poisson QoI.
pub fn poisson_var_cvar_exact(tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    // Φ′ is increasing on [0, 6] from 1 − 8·6⁶·... < 0 to 1.
    let (mut lo, mut hi) = (0.0f64, 6.0f64);
    if poisson_phi_deriv(lo, tau, 1)? >= 0.0 {
        return Err(Error::Numerical("Φ′(0) >= 0: quantile at the lower support bound".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poisson_phi_deriv(mid, tau, 1)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let q = 0.5 * (lo + hi);
    Ok((q, poisson_phi_exact(q, tau)?))
}

/// Discounted European call on geometric Brownian motion, simulated with
/// Euler–Maruyama on `steps0 · 2^l` uniform steps at level `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackScholesModel {
    pub r: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub strike: f64,
    pub s0: f64,
    pub steps0: usize,
}

impl Default for BlackScholesModel {
    fn default() -> Self {
        Self { r: 0.05, sigma: 0.2, maturity: 1.0, strike: 10.0, s0: 10.0, steps0: 4 }
    }
}

/// Deepest Black-Scholes level (4·2²⁰ steps would already be absurd).
pub const BS_MAX_LEVEL: usize = 20;

impl BlackScholesModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.maturity > 0.0
            && self.strike >= 0.0
            && self.s0 > 0.0
            && self.r.is_finite()
            && self.steps0 >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Black-Scholes parameters: {self:?}")))
        }
    }

    pub fn steps(&self, level: usize) -> usize {
        self.steps0 << level
    }

    /// Fine and coarse payoffs driven by the given standard normals, one per
    /// fine step. Coarse increments are sums of consecutive fine pairs.
    pub fn pair_from_normals(&self, level: usize, normals: &[f64]) -> (f64, Option<f64>) {
        let nf = self.steps(level);
        debug_assert_eq!(normals.len(), nf);
        let dt = self.maturity / nf as f64;
        let sq = dt.sqrt();
        let mut fine = self.s0;
        let mut coarse = self.s0;
        let mut carry = 0.0;
        for (i, z) in normals.iter().enumerate() {
            let dw = sq * z;
            fine *= 1.0 + self.r * dt + self.sigma * dw;
            if i % 2 == 0 {
                carry = dw;
            } else {
                coarse *= 1.0 + self.r * 2.0 * dt + self.sigma * (carry + dw);
            }
        }
        let disc = (-self.r * self.maturity).exp();
        let payoff = |s: f64| disc * (s - self.strike).max(0.0);
        (payoff(fine), (level > 0).then(|| payoff(coarse)))
    }

    /// `F_Q(θ)` of the exact discounted payoff.
    pub fn cdf_exact(&self, theta: f64) -> f64 {
        if theta < 0.0 {
            return 0.0;
        }
        let t = self.maturity;
        let level = self.strike + (self.r * t).exp() * theta;
        if level <= 0.0 {
            return 0.0;
        }
        let z = (level.ln() - self.s0.ln() - self.r * t + 0.5 * self.sigma * self.sigma * t)
            / (self.sigma * t.sqrt());
        norm_cdf(z)
    }

    /// Discounted call price with strike `k`.
    pub fn call_price(&self, k: f64) -> f64 {
        let t = self.maturity;
        if k <= 0.0 {
            return self.s0 - k * (-self.r * t).exp();
        }
        let st = self.sigma * t.sqrt();
        let d1 = ((self.s0 / k).ln() + (self.r + 0.5 * self.sigma * self.sigma) * t) / st;
        self.s0 * norm_cdf(d1) - k * (-self.r * t).exp() * norm_cdf(d1 - st)
    }

    /// Exact `Φ(θ)`; `E[(Q−θ)⁺]` is a call with a shifted strike for `θ ≥ 0`.
    pub fn phi_exact(&self, theta: f64, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        let tail = if theta >= 0.0 {
            self.call_price(self.strike + (self.r * self.maturity).exp() * theta)
        } else {
            self.call_price(self.strike) - theta
        };
        Ok(theta + tail / (1.0 - tau))
    }

    pub fn var_cvar_exact(&self, tau: f64) -> Result<(f64, f64)> {
        check_tau(tau)?;
        let atom = self.cdf_exact(0.0);
        if tau <= atom {
            return Err(Error::invalid(format!(
                "tau={tau} <= F(0)={atom:.6}: the quantile sits on the atom at zero"
            )));
        }
        let mut hi = 1.0;
        while self.cdf_exact(hi) < tau {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Numerical("quantile bracket diverged".into()));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_exact(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * (1.0 + hi) {
                break;
            }
        }
        let q = 0.5 * (lo + hi);
        Ok((q, self.phi_exact(q, tau)?))
    }
}

impl Model for BlackScholesModel {
    fn name(&self) -> &str {
        "black-scholes"
    }

    fn sample(&self, level: usize, rng: &mut ChaCha8Rng) -> Result<(f64, Option<f64>)> {
        let normals: Vec<f64> = (0..self.steps(level)).map(|_| rng.sample(StandardNormal)).collect();
        Ok(self.pair_from_normals(level, &normals))
    }

    fn unit_cost(&self, level: usize) -> f64 {
        self.steps(level) as f64
    }

    fn max_level(&self) -> usize {
        BS_MAX_LEVEL
    }

    fn exact_var_cvar(&self, tau: f64) -> Option<Result<(f64, f64)>> {
        Some(self.var_cvar_exact(tau))
    }

    fn exact_phi(&self, theta: f64, tau: f64) -> Option<f64> {
        self.phi_exact(theta, tau).ok()
    }
}
