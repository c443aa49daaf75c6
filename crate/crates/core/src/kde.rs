//! Gaussian kernel smoothing of empirical QoI measures.
//!
//! Smoothing the empirical measure with a Gaussian kernel turns `E[φ(θ,Q)]`
//! into a smooth function of θ with a closed form, which is what makes
//! derivative-based bias and fourth-derivative estimates possible.

use libm::erfc;

use crate::hierarchy::CorrelatedPair;
use crate::spline::{uniform_points, ThetaGrid};
use crate::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Scott's rule `δ = σ̂ N^{-1/5}` with the unbiased standard deviation.
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("bandwidth needs >= 2 samples, got {n}")));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    Ok(sd * (n as f64).powf(-0.2))
}

/// Kernel density model: Gaussian kernels of width `bandwidth` at `centers`.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("kde needs at least one center"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { centers, bandwidth })
    }

    /// Model with the Scott bandwidth of its own centers.
    pub fn scott(centers: Vec<f64>) -> Result<Self> {
        let bw = scott_bandwidth(&centers)?;
        Self::new(centers, bw)
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

fn phi_of_centers(theta: f64, centers: &[f64], delta: f64, tau: f64) -> f64 {
    let s: f64 = centers
        .iter()
        .map(|&mu| {
            let d = mu - theta;
            let z = d / delta;
            d * norm_cdf(z) + delta * norm_pdf(z)
        })
        .sum();
    theta + s / (centers.len() as f64 * (1.0 - tau))
}

/// Closed form of `∫ φ(θ,q) p_kde(q) dq`:
/// `θ + (1/(1−τ)) mean_i[(μ_i−θ) G(z_i) + δ g(z_i)]`, `z_i = (μ_i−θ)/δ`.
pub fn smoothed_phi(theta: f64, model: &KdeModel, tau: f64) -> f64 {
    phi_of_centers(theta, &model.centers, model.bandwidth, tau)
}

/// Product-kernel expectation of `φ(θ,Q_l) − φ(θ,Q_{l−1})` over paired samples.
///
/// The integrand separates, so this is the difference of the two marginal
/// smoothed expectations.
pub fn smoothed_diff(
    theta: f64,
    pairs: &[CorrelatedPair],
    delta_fine: f64,
    delta_coarse: f64,
    tau: f64,
) -> Result<f64> {
    let (fine, coarse) = split_pairs(pairs)?;
    if !(delta_fine > 0.0 && delta_coarse > 0.0) {
        return Err(Error::invalid("bandwidths must be positive"));
    }
    Ok(smoothed_diff_split(theta, &fine, &coarse, delta_fine, delta_coarse, tau))
}

pub(crate) fn smoothed_diff_split(
    theta: f64,
    fine: &[f64],
    coarse: &[f64],
    delta_fine: f64,
    delta_coarse: f64,
    tau: f64,
) -> f64 {
    phi_of_centers(theta, fine, delta_fine, tau) - phi_of_centers(theta, coarse, delta_coarse, tau)
}

/// Fine and coarse members of difference-level pairs.
pub(crate) fn split_pairs(pairs: &[CorrelatedPair]) -> Result<(Vec<f64>, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to smooth"));
    }
    let mut fine = Vec::with_capacity(pairs.len());
    let mut coarse = Vec::with_capacity(pairs.len());
    for p in pairs {
        let c = p
            .coarse
            .ok_or_else(|| Error::invalid("smoothed differences need level >= 1 pairs"))?;
        fine.push(p.fine);
        coarse.push(c);
    }
    Ok((fine, coarse))
}

/// Largest absolute central fourth difference
/// `(u_{i−2} − 4u_{i−1} + 6u_i − 4u_{i+1} + u_{i+2}) / h⁴`.
pub fn max_fourth_difference(u: &[f64], h: f64) -> f64 {
    let h4 = h.powi(4);
    u.windows(5)
        .map(|w| ((w[0] - 4.0 * w[1] + 6.0 * w[2] - 4.0 * w[3] + w[4]) / h4).abs())
        .fold(0.0, f64::max)
}

/// Estimate of `‖Φ⁽⁴⁾‖_∞` on Θ from the smoothed expectation of `samples`.
pub fn fourth_deriv_norm(samples: &[f64], grid: &ThetaGrid, tau: f64, n_fine: usize) -> Result<f64> {
    if n_fine < 7 {
        return Err(Error::invalid(format!("n_fine must be >= 7, got {n_fine}")));
    }
    let model = KdeModel::scott(samples.to_vec())?;
    let xs = uniform_points(grid.theta_min, grid.theta_max, n_fine);
    let u: Vec<f64> = xs.iter().map(|&x| smoothed_phi(x, &model, tau)).collect();
    Ok(max_fourth_difference(&u, grid.length() / (n_fine - 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(fine: f64, coarse: f64) -> CorrelatedPair {
        CorrelatedPair { level: 1, fine, coarse: Some(coarse) }
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        let d = (norm_cdf(1.959_963_984_540_054) - 0.975).abs();
        assert!(d < 1e-12, "d={d:e}");
        // Φ(−8) = 6.220960574271785e−16
        let rel = (norm_cdf(-8.0) - 6.220_960_574_271_785e-16).abs() / 6.22e-16;
        assert!(rel < 1e-12, "rel={rel}");
    }

    #[test]
    fn scott_on_two_points() {
        let d = scott_bandwidth(&[0.0, 1.0]).unwrap();
        assert!((d - 0.5f64.sqrt() * 2f64.powf(-0.2)).abs() < 1e-15);
        assert!(scott_bandwidth(&[2.0, 2.0, 2.0]).is_err());
        assert!(scott_bandwidth(&[2.0]).is_err());
    }

    #[test]
    fn scott_on_standard_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let d = scott_bandwidth(&xs).unwrap();
        assert!((d / 10_000f64.powf(-0.2) - 1.0).abs() < 0.1);
    }

    #[test]
    fn far_above_centers_gives_theta() {
        let m = KdeModel::new(vec![0.0, 1.0, 2.0], 0.1).unwrap();
        assert!((smoothed_phi(10.0, &m, 0.7) - 10.0).abs() < 1e-14);
    }

    #[test]
    fn point_mass_limit() {
        let m = KdeModel::new(vec![3.0], 1e-12).unwrap();
        assert!((smoothed_phi(0.0, &m, 0.7) - 10.0).abs() < 1e-9);
        assert!((smoothed_phi(5.0, &m, 0.7) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn diff_of_identical_members_vanishes() {
        let ps = [pair(1.0, 1.0), pair(2.0, 2.0), pair(0.5, 0.5)];
        for th in [0.0, 1.0, 2.5] {
            assert_eq!(smoothed_diff(th, &ps, 0.2, 0.2, 0.7).unwrap(), 0.0);
        }
    }

    #[test]
    fn diff_point_masses() {
        let v = smoothed_diff(0.0, &[pair(2.0, 1.0)], 1e-12, 1e-12, 0.7).unwrap();
        assert!((v - 10.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn diff_rejects_bad_input() {
        assert!(smoothed_diff(0.0, &[], 0.1, 0.1, 0.7).is_err());
        let lvl0 = CorrelatedPair { level: 0, fine: 1.0, coarse: None };
        assert!(smoothed_diff(0.0, &[lvl0], 0.1, 0.1, 0.7).is_err());
        assert!(smoothed_diff(0.0, &[pair(1.0, 0.0)], 0.0, 0.1, 0.7).is_err());
    }

    #[test]
    fn fourth_difference_of_cubic_is_zero() {
        let xs = uniform_points(0.0, 2.0, 51);
        let u: Vec<f64> = xs.iter().map(|x| 4.0 * x * x * x - x + 2.0).collect();
        let scale = 32.0;
        assert!(max_fourth_difference(&u, 0.04) <= 1e-6 * scale);
        let q: Vec<f64> = xs.iter().map(|x| x.powi(4)).collect();
        assert!((max_fourth_difference(&q, 0.04) - 24.0).abs() < 1e-6);
    }

    #[test]
    fn fourth_deriv_norm_validates() {
        let g = ThetaGrid::new(0.0, 1.0, 5).unwrap();
        assert!(fourth_deriv_norm(&[1.0, 2.0], &g, 0.5, 6).is_err());
        assert!(fourth_deriv_norm(&[1.0, 1.0], &g, 0.5, 100).is_err());
    }
}
