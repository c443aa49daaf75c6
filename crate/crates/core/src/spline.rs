//! Cubic spline interpolation on uniform nodes.
//!
//! Splines are built from node values only. The end slopes are taken from
//! high-order one-sided finite differences of those values, which keeps the
//! interpolant fourth-order accurate up to the boundary (see [`fit`]).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform nodes `θ_1 < … < θ_n` spanning `[theta_min, theta_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub theta_min: f64,
    pub theta_max: f64,
    pub n: usize,
}

impl ThetaGrid {
    pub fn new(theta_min: f64, theta_max: f64, n: usize) -> Result<Self> {
        if !(theta_min.is_finite() && theta_max.is_finite() && theta_min < theta_max) {
            return Err(Error::invalid(format!(
                "grid bounds must satisfy theta_min < theta_max, got [{theta_min}, {theta_max}]"
            )));
        }
        if n < 4 {
            return Err(Error::invalid(format!("spline grid needs n >= 4 nodes, got {n}")));
        }
        Ok(Self { theta_min, theta_max, n })
    }

    /// Same interval, different node count.
    pub fn with_nodes(&self, n: usize) -> Result<Self> {
        Self::new(self.theta_min, self.theta_max, n)
    }

    /// `|Θ|`.
    pub fn length(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn spacing(&self) -> f64 {
        self.length() / (self.n - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.n {
            self.theta_max
        } else {
            self.theta_min + j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn contains(&self, theta: f64) -> bool {
        let slack = 1e-12 * (1.0 + self.theta_min.abs().max(self.theta_max.abs()));
        theta >= self.theta_min - slack && theta <= self.theta_max + slack
    }
}

/// `count` equispaced points on `[a, b]`, endpoints included exactly.
pub fn uniform_points(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { b } else { a + i as f64 * h })
                .collect()
        }
    }
}

/// A C² piecewise cubic on a [`ThetaGrid`].
///
/// Piece `j` is stored as `a + b t + c t² + d t³` with `t = θ − θ_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineCurve {
    grid: ThetaGrid,
    coef: Vec<[f64; 4]>,
}

// One-sided first-derivative stencils: weights and denominator (times h).
const SLOPE_4: ([f64; 4], f64) = ([-11.0, 18.0, -9.0, 2.0], 6.0);
const SLOPE_5: ([f64; 5], f64) = ([-25.0, 48.0, -36.0, 16.0, -3.0], 12.0);
const SLOPE_7: ([f64; 7], f64) = ([-147.0, 360.0, -450.0, 400.0, -225.0, 72.0, -10.0], 60.0);

fn end_slopes(y: &[f64], h: f64) -> (f64, f64) {
    let n = y.len();
    let (w, denom): (&[f64], f64) = if n >= 7 {
        (&SLOPE_7.0, SLOPE_7.1)
    } else if n >= 5 {
        (&SLOPE_5.0, SLOPE_5.1)
    } else {
        (&SLOPE_4.0, SLOPE_4.1)
    };
    let left: f64 = w.iter().enumerate().map(|(k, c)| c * y[k]).sum();
    let right: f64 = w.iter().enumerate().map(|(k, c)| c * y[n - 1 - k]).sum();
    (left / (denom * h), -right / (denom * h))
}

/// Fits the interpolating cubic spline through `values` at the grid nodes.
///
/// End conditions clamp the first derivative to a one-sided difference
/// estimate of order 3 (n = 4), 4 (n = 5, 6) or 6 (n ≥ 7). The estimate is
/// exact for cubics, so cubic data is reproduced, and the map from values to
/// curve is linear.
pub fn fit(grid: ThetaGrid, values: &[f64]) -> Result<SplineCurve> {
    let n = grid.n;
    if values.len() != n {
        return Err(Error::invalid(format!(
            "expected {n} node values, got {}",
            values.len()
        )));
    }
    if n < 4 {
        return Err(Error::invalid("spline fit needs at least 4 nodes"));
    }
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite spline value at node {j}")));
    }

    let h = grid.spacing();
    let (s0, s1) = end_slopes(values, h);

    // Second derivatives M solve a symmetric tridiagonal system with unit
    // off-diagonals; the Thomas algorithm is stable here (diagonal dominance).
    let mut rhs = vec![0.0; n];
    rhs[0] = 6.0 / h * ((values[1] - values[0]) / h - s0);
    for j in 1..n - 1 {
        rhs[j] = 6.0 / (h * h) * (values[j + 1] - 2.0 * values[j] + values[j - 1]);
    }
    rhs[n - 1] = 6.0 / h * (s1 - (values[n - 1] - values[n - 2]) / h);

    let diag = |i: usize| if i == 0 || i == n - 1 { 2.0 } else { 4.0 };
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = 1.0 / diag(0);
    dp[0] = rhs[0] / diag(0);
    for i in 1..n {
        let m = diag(i) - cp[i - 1];
        cp[i] = 1.0 / m;
        dp[i] = (rhs[i] - dp[i - 1]) / m;
    }
    let mut second = vec![0.0; n];
    second[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        second[i] = dp[i] - cp[i] * second[i + 1];
    }

    let coef = (0..n - 1)
        .map(|j| {
            let (y0, y1) = (values[j], values[j + 1]);
            let (m0, m1) = (second[j], second[j + 1]);
            [
                y0,
                (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0,
                m0 / 2.0,
                (m1 - m0) / (6.0 * h),
            ]
        })
        .collect();
    Ok(SplineCurve { grid, coef })
}

impl SplineCurve {
    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    /// Polynomial coefficients of each piece, in the local variable `t`.
    pub fn pieces(&self) -> &[[f64; 4]] {
        &self.coef
    }

    /// m-th derivative at `theta`. Fails outside Θ or for `m > 3`.
    pub fn eval(&self, m: usize, theta: f64) -> Result<f64> {
        if m > 3 {
            return Err(Error::invalid(format!("derivative order {m} exceeds 3")));
        }
        if !self.grid.contains(theta) {
            return Err(Error::invalid(format!(
                "theta={theta} outside [{}, {}]",
                self.grid.theta_min, self.grid.theta_max
            )));
        }
        Ok(self.eval_unchecked(m, theta))
    }

    /// As [`eval`](Self::eval) but clamps to the end pieces instead of failing.
    pub fn eval_unchecked(&self, m: usize, theta: f64) -> f64 {
        let (j, t) = self.locate(theta);
        piece_deriv(&self.coef[j], m, t)
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let h = self.grid.spacing();
        let x = ((theta - self.grid.theta_min) / h).floor();
        let j = if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.grid.n - 2)
        };
        (j, theta - self.grid.node(j))
    }

    /// Largest `|S^(m)|` over `n_fine` equispaced points of Θ.
    pub fn sup_norm_deriv(&self, m: usize, n_fine: usize) -> Result<f64> {
        if n_fine < 2 {
            return Err(Error::invalid("n_fine must be at least 2"));
        }
        if m > 3 {
            return Err(Error::invalid(format!("derivative order {m} exceeds 3")));
        }
        Ok(uniform_points(self.grid.theta_min, self.grid.theta_max, n_fine)
            .into_iter()
            .map(|x| self.eval_unchecked(m, x).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn piece_deriv(p: &[f64; 4], m: usize, t: f64) -> f64 {
    let [a, b, c, d] = *p;
    match m {
        0 => a + t * (b + t * (c + t * d)),
        1 => b + t * (2.0 * c + 3.0 * d * t),
        2 => 2.0 * c + 6.0 * d * t,
        3 => 6.0 * d,
        _ => 0.0,
    }
}

/// The interpolation and stability constants of the cubic spline operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_n: f64,
}

pub fn c1(m: usize) -> f64 {
    [5.0 / 384.0, 1.0 / 24.0, 3.0 / 8.0][m]
}

pub fn c2(m: usize, theta_len: f64) -> f64 {
    [1.0, 18.0 / theta_len, 48.0 / (theta_len * theta_len)][m]
}

pub fn c3() -> f64 {
    7.0 * (2.0 * 7f64.sqrt() + 1.0) / 27.0
}

/// `c(n) = 2π (ln(n+1) + √(8/π) Σ_{k=2}^{n+1} k⁻² (ln k)^{-1/2})`.
pub fn c_of_n(n: usize) -> f64 {
    let tail: f64 = (2..=n + 1)
        .map(|k| {
            let k = k as f64;
            1.0 / (k * k * k.ln().sqrt())
        })
        .sum();
    2.0 * std::f64::consts::PI * (((n + 1) as f64).ln() + (8.0 / std::f64::consts::PI).sqrt() * tail)
}

pub fn constants(m: usize, n: usize, theta_len: f64) -> Result<SplineConstants> {
    if m > 2 {
        return Err(Error::invalid(format!("constants defined for m <= 2, got {m}")));
    }
    Ok(SplineConstants {
        c1: c1(m),
        c2: c2(m, theta_len),
        c3: c3(),
        c_n: c_of_n(n),
    })
}

/// `K(n, m) = C2(m)² C3² (n−1)^{2m} c(n)`.
pub fn k_factor(n: usize, m: usize, theta_len: f64) -> f64 {
    let s = c2(m, theta_len) * c3() * ((n - 1) as f64).powi(m as i32);
    s * s * c_of_n(n)
}

/// The cardinal basis `ψ_i`: spline through the i-th unit vector.
pub fn cardinal_basis(grid: ThetaGrid) -> Result<Vec<SplineCurve>> {
    (0..grid.n)
        .map(|i| {
            let mut e = vec![0.0; grid.n];
            e[i] = 1.0;
            fit(grid, &e)
        })
        .collect()
}

fn deriv_poly(p: &[f64; 4], m: usize) -> [f64; 4] {
    let [a, b, c, d] = *p;
    match m {
        0 => [a, b, c, d],
        1 => [b, 2.0 * c, 3.0 * d, 0.0],
        2 => [2.0 * c, 6.0 * d, 0.0, 0.0],
        3 => [6.0 * d, 0.0, 0.0, 0.0],
        _ => [0.0; 4],
    }
}

/// Gram matrix `B_ij = ∫_Θ ψ_i^(m) ψ_j^(m) dθ`, integrated exactly piece by piece.
pub fn gram_matrix(grid: ThetaGrid, m: usize) -> Result<Vec<Vec<f64>>> {
    let basis = cardinal_basis(grid)?;
    let h = grid.spacing();
    let n = grid.n;
    let mut b = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for piece in 0..n - 1 {
                let p = deriv_poly(&basis[i].coef[piece], m);
                let q = deriv_poly(&basis[j].coef[piece], m);
                for (k, pk) in p.iter().enumerate() {
                    for (l, ql) in q.iter().enumerate() {
                        let e = (k + l + 1) as i32;
                        s += pk * ql * h.powi(e) / e as f64;
                    }
                }
            }
            b[i][j] = s;
            b[j][i] = s;
        }
    }
    Ok(b)
}

/// Precomputed linear map from node values to spline derivatives on a fine
/// grid. Fitting is linear, so `S^(m)(x_k) = Σ_j A^(m)_kj y_j`; this is much
/// cheaper than refitting when many value vectors share one grid.
#[derive(Clone, Debug)]
pub struct FineOperator {
    n: usize,
    n_fine: usize,
    // [m][k * n + j]
    mats: [Vec<f64>; 3],
}

impl FineOperator {
    pub fn new(grid: ThetaGrid, n_fine: usize) -> Result<Self> {
        if n_fine < 2 {
            return Err(Error::invalid("n_fine must be at least 2"));
        }
        let basis = cardinal_basis(grid)?;
        let xs = uniform_points(grid.theta_min, grid.theta_max, n_fine);
        let n = grid.n;
        let mats = [0usize, 1, 2].map(|m| {
            let mut a = vec![0.0; n_fine * n];
            for (k, &x) in xs.iter().enumerate() {
                for (j, psi) in basis.iter().enumerate() {
                    a[k * n + j] = psi.eval_unchecked(m, x);
                }
            }
            a
        });
        Ok(Self { n, n_fine, mats })
    }

    /// `max_k |S^(m)(x_k)|` for the spline through `values`.
    pub fn sup_norm(&self, m: usize, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        self.mats[m]
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(values).map(|(a, y)| a * y).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> ThetaGrid {
        ThetaGrid::new(1.5, 2.5, n).unwrap()
    }

    fn sample(g: &ThetaGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
        g.nodes().into_iter().map(f).collect()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(ThetaGrid::new(1.0, 1.0, 5).is_err());
        assert!(ThetaGrid::new(0.0, 1.0, 3).is_err());
        assert!(ThetaGrid::new(f64::NAN, 1.0, 5).is_err());
    }

    #[test]
    fn identity_is_reproduced_with_zero_curvature() {
        for n in [4, 5, 6, 7, 13] {
            let g = grid(n);
            let s = fit(g, &sample(&g, |x| x)).unwrap();
            for x in uniform_points(1.5, 2.5, 101) {
                assert!((s.eval(0, x).unwrap() - x).abs() < 1e-13);
                assert!(s.eval(2, x).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cubic_is_reproduced() {
        let f = |x: f64| x * x * x - 2.0 * x * x + 0.5;
        for n in [4, 5, 6, 8, 20] {
            let g = grid(n);
            let s = fit(g, &sample(&g, f)).unwrap();
            for x in uniform_points(1.5, 2.5, 1000) {
                assert!((s.eval(0, x).unwrap() - f(x)).abs() < 1e-12, "n={n}");
                assert!((s.eval(1, x).unwrap() - (3.0 * x * x - 4.0 * x)).abs() < 1e-10);
                assert!((s.eval(2, x).unwrap() - (6.0 * x - 4.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadratic_curvature_is_two() {
        let g = grid(9);
        let s = fit(g, &sample(&g, |x| x * x)).unwrap();
        for x in uniform_points(1.5, 2.5, 57) {
            assert!((s.eval(2, x).unwrap() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolates_nodes() {
        let g = grid(11);
        let v = sample(&g, |x| (3.0 * x).sin());
        let s = fit(g, &v).unwrap();
        for (j, y) in v.iter().enumerate() {
            assert!((s.eval(0, g.node(j)).unwrap() - y).abs() < 1e-14);
        }
    }

    #[test]
    fn continuity_across_interior_nodes() {
        let g = grid(12);
        let s = fit(g, &sample(&g, |x| (2.0 * x).exp())).unwrap();
        let h = g.spacing();
        for j in 1..g.n - 1 {
            let left = &s.pieces()[j - 1];
            let right = &s.pieces()[j];
            for m in 0..3 {
                let l = piece_deriv(left, m, h);
                let r = piece_deriv(right, m, 0.0);
                assert!((l - r).abs() < 1e-9 * (1.0 + r.abs()), "m={m} node={j}");
            }
        }
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let g = grid(5);
        let s = fit(g, &[1.0; 5]).unwrap();
        assert!(s.eval(0, 1.4).is_err());
        assert!(s.eval(0, 2.6).is_err());
        assert!(s.eval(4, 2.0).is_err());
        assert!(fit(g, &[1.0; 4]).is_err());
    }

    #[test]
    fn sup_norm_of_simple_curves() {
        let g = grid(6);
        let c = fit(g, &[3.0; 6]).unwrap();
        assert!(c.sup_norm_deriv(1, 1000).unwrap() < 1e-12);
        assert!(c.sup_norm_deriv(2, 1000).unwrap() < 1e-12);
        let lin = fit(g, &sample(&g, |x| x)).unwrap();
        assert!((lin.sup_norm_deriv(1, 1000).unwrap() - 1.0).abs() < 1e-12);
        assert!(lin.sup_norm_deriv(0, 1).is_err());
    }

    #[test]
    fn constants_match_closed_forms() {
        let k = constants(0, 10, 1.0).unwrap();
        assert_eq!(k.c1, 5.0 / 384.0);
        assert!((k.c3 - 1.631_130_309_440_9).abs() < 1e-12);
        assert_eq!(constants(1, 10, 2.0).unwrap().c2, 9.0);
        assert_eq!(constants(2, 10, 2.0).unwrap().c2, 12.0);
        assert!(constants(3, 10, 1.0).is_err());
        // n = 1: a single summand at k = 2.
        let expect = 2.0
            * std::f64::consts::PI
            * (2f64.ln() + (8.0 / std::f64::consts::PI).sqrt() / (4.0 * 2f64.ln().sqrt()));
        assert!((c_of_n(1) - expect).abs() < 1e-14);
        assert_eq!(c_of_n(0), 0.0);
    }

    #[test]
    fn fine_operator_matches_direct_evaluation() {
        let g = grid(9);
        let v = sample(&g, |x| (x - 2.0).powi(4));
        let s = fit(g, &v).unwrap();
        let op = FineOperator::new(g, 300).unwrap();
        for m in 0..3 {
            let a = op.sup_norm(m, &v);
            let b = s.sup_norm_deriv(m, 300).unwrap();
            assert!((a - b).abs() < 1e-11 * (1.0 + b));
        }
    }

    #[test]
    fn gram_of_values_is_integral_of_squares() {
        // For y = θ the spline is exact, so yᵀ B⁽⁰⁾ y = ∫ θ² and yᵀ B⁽¹⁾ y = |Θ|.
        let g = grid(8);
        let y = g.nodes();
        for (m, expect) in [(0, (2.5f64.powi(3) - 1.5f64.powi(3)) / 3.0), (1, 1.0)] {
            let b = gram_matrix(g, m).unwrap();
            let q: f64 = (0..8)
                .flat_map(|i| (0..8).map(move |j| (i, j)))
                .map(|(i, j)| y[i] * b[i][j] * y[j])
                .sum();
            assert!((q - expect).abs() < 1e-11, "m={m}: {q} vs {expect}");
        }
    }
}
