//! Quadrature building blocks: Gauss–Legendre rules, product-integration
//! weights for pair integrals with a diagonal singularity, and the
//! logarithmic mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (
        x.iter().map(|t| c + h * t).collect(),
        w.iter().map(|v| h * v).collect(),
    )
}

/// Logarithmic mean `(a - b) / (ln a - ln b)`, with `L(a, a) = a` and
/// `L(0, b) = 0`.
#[inline]
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let s = a + b;
    let u = (a - b) / s;
    if u.abs() < 1e-3 {
        let u2 = u * u;
        0.5 * s * (1.0 - u2 / 3.0 - 4.0 * u2 * u2 / 45.0)
    } else {
        (a - b) / (a.ln() - b.ln())
    }
}

/// How the excluded diagonal band `|x - y| < δ` is treated in pair sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandModel {
    /// Drop the band entirely.
    Neglect,
    /// Add the leading Taylor term of the band, assuming the integrand
    /// behaves like `|x - y|^(2 - γ)` near the diagonal.
    #[default]
    Taylor,
}

/// Diagonal-band settings for pair quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    /// Band half-width in grid cells, `δ_diag = cells · spacing`.
    pub cells: usize,
    pub model: BandModel,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            cells: 1,
            model: BandModel::Taylor,
        }
    }
}

/// Pair-integration rule on a grid: `∫ g(x_i, y) dy ≈ Σ_j w_ij g(x_i, y_j)`.
///
/// In 1D `w_ij = c(|i - j|) ω_j`, where `c` carries the product-integration
/// weights against `|x - y|^(2-γ)` and `ω_j` the trapezoid end factors, so
/// `τ_i w_ij` is symmetric in `(i, j)`. In 2D the rule is the tensor
/// trapezoid with the diagonal node removed.
#[derive(Debug, Clone)]
pub struct PairRule {
    dim: usize,
    n: usize,
    tau: Vec<f64>,
    omega: Vec<f64>,
    c: Vec<f64>,
    band: Vec<f64>,
    delta: f64,
}

impl PairRule {
    pub fn new(grid: &Grid, singularity_order: Option<f64>, band: BandConfig) -> Result<Self> {
        let tau = grid.weights();
        let n = grid.len();
        match grid.dim() {
            1 => {
                let axis = grid.axis(0);
                let h = axis.spacing();
                let omega: Vec<f64> = tau.iter().map(|t| t / h).collect();
                let (c, b, delta) = line_weights(axis.points, h, singularity_order, band)?;
                Ok(Self {
                    dim: 1,
                    n,
                    tau,
                    omega,
                    c,
                    band: b,
                    delta,
                })
            }
            _ => {
                if singularity_order.is_some() {
                    return Err(Error::Unsupported(
                        "singular kernels are only supported on 1D grids".into(),
                    ));
                }
                Ok(Self {
                    dim: 2,
                    n,
                    tau,
                    omega: Vec::new(),
                    c: Vec::new(),
                    band: Vec::new(),
                    delta: grid.min_spacing(),
                })
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Trapezoid node weights `τ_i`.
    #[inline]
    pub fn node_weights(&self) -> &[f64] {
        &self.tau
    }

    /// Excluded band half-width `δ_diag`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.dim == 1 {
            self.c[i.abs_diff(j)] * self.omega[j]
        } else if i == j {
            0.0
        } else {
            self.tau[j]
        }
    }

    /// Part of [`PairRule::weight`] that stands in for the excluded band.
    #[inline]
    pub fn band_weight(&self, i: usize, j: usize) -> f64 {
        if self.dim == 1 {
            self.band[i.abs_diff(j)] * self.omega[j]
        } else {
            0.0
        }
    }

    /// Row of weights for node `i`.
    pub fn row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.weight(i, j);
        }
    }

    /// Upper bound on the number of nonzero offsets per row (1D) used to
    /// skip the excluded band quickly.
    pub fn first_offset(&self) -> usize {
        if self.dim == 1 {
            self.c.iter().position(|&v| v != 0.0).unwrap_or(self.c.len())
        } else {
            1
        }
    }
}

/// Distance weights `c(m)` and their band parts for a line of `points` nodes.
fn line_weights(
    points: usize,
    h: f64,
    order: Option<f64>,
    band: BandConfig,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut c = vec![0.0; points];
    let mut b = vec![0.0; points];
    let gamma = match order {
        None => {
            c.iter_mut().skip(1).for_each(|v| *v = h);
            return Ok((c, b, h));
        }
        Some(g) => g,
    };
    if !(gamma > 0.0 && gamma < 3.0) {
        return Err(Error::Unsupported(format!(
            "pair quadrature needs singularity order in (0, 3), got {gamma}"
        )));
    }
    let m0 = band.cells.max(1);
    if m0 >= points {
        return Err(Error::InvalidArgument(format!(
            "band of {m0} cells does not fit a line of {points} nodes"
        )));
    }
    let s = 2.0 - gamma;
    c[m0] = h * half_hat_right(m0 as f64, s) / (m0 as f64).powf(s);
    if band.model == BandModel::Taylor {
        let extra = m0 as f64 * h / (3.0 - gamma);
        c[m0] += extra;
        b[m0] = extra;
    }
    for (m, v) in c.iter_mut().enumerate().skip(m0 + 1) {
        *v = h * hat_moment_ratio(m as f64, s);
    }
    Ok((c, b, m0 as f64 * h))
}

/// `∫ hat_m(t) t^s dt / m^s` for the unit hat centred at `m >= 1`.
fn hat_moment_ratio(m: f64, s: f64) -> f64 {
    if m >= 40.0 {
        let m2 = m * m;
        return 1.0 + s * (s - 1.0) / (12.0 * m2)
            + s * (s - 1.0) * (s - 2.0) * (s - 3.0) / (360.0 * m2 * m2);
    }
    let p = |t: f64| t.powf(s + 2.0) / (s + 2.0);
    let q = |t: f64| t.powf(s + 1.0) / (s + 1.0);
    let (a, mid, b) = (m - 1.0, m, m + 1.0);
    let left = (p(mid) - p(a)) - a * (q(mid) - q(a));
    let right = b * (q(b) - q(mid)) - (p(b) - p(mid));
    (left + right) / m.powf(s)
}

/// `∫_m^{m+1} (m + 1 - t) t^s dt`.
fn half_hat_right(m: f64, s: f64) -> f64 {
    let p = |t: f64| t.powf(s + 2.0) / (s + 2.0);
    let q = |t: f64| t.powf(s + 1.0) / (s + 1.0);
    let b = m + 1.0;
    b * (q(b) - q(m)) - (p(b) - p(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        for k in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "k={k}");
        }
        let (x, w) = gauss_legendre_on(8, 0.0, 2.0);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((q - (2f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn log_mean_limits() {
        assert_eq!(log_mean(0.0, 1.0), 0.0);
        assert!((log_mean(2.0, 2.0) - 2.0).abs() < 1e-15);
        let (a, b) = (1.0, 1.0 + 1e-5);
        let direct = (a - b) / (f64::ln(a) - f64::ln(b));
        assert!((log_mean(a, b) - direct).abs() < 1e-10);
        assert!((log_mean(1.0, std::f64::consts::E) - (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn hat_series_matches_closed_form() {
        for &s in &[-0.5, 0.0, 0.5, 1.0] {
            for &m in &[40.0, 41.0, 60.0] {
                let p = |t: f64| t.powf(s + 2.0) / (s + 2.0);
                let q = |t: f64| t.powf(s + 1.0) / (s + 1.0);
                let (a, b) = (m - 1.0, m + 1.0);
                let closed = ((p(m) - p(a)) - a * (q(m) - q(a)) + b * (q(b) - q(m))
                    - (p(b) - p(m)))
                    / f64::powf(m, s);
                assert!((closed - hat_moment_ratio(m, s)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn product_weights_are_exact_for_power_times_linear() {
        // ∫_δ^L z^(2-γ) (1 + z) dz should be reproduced to truncation at the far end
        let (points, h, gamma) = (4001, 0.01, 2.5);
        for cells in [1usize, 2, 4] {
            let band = BandConfig {
                cells,
                model: BandModel::Neglect,
            };
            let (c, _, delta) = line_weights(points, h, Some(gamma), band).unwrap();
            let s = 2.0 - gamma;
            let l = 1.0;
            let last = (l / h).round() as usize;
            let f = |z: f64| z.powf(s) * (1.0 + z);
            let mut q = 0.0;
            for m in cells..last {
                q += c[m] * f(m as f64 * h);
            }
            // the last node carries only the left half hat
            let lm = last as f64;
            let p = |t: f64| t.powf(s + 2.0) / (s + 2.0);
            let qq = |t: f64| t.powf(s + 1.0) / (s + 1.0);
            let left = (p(lm) - p(lm - 1.0)) - (lm - 1.0) * (qq(lm) - qq(lm - 1.0));
            q += h * left / lm.powf(s) * f(l);
            let g = |z: f64| z.powf(s + 1.0) / (s + 1.0) + z.powf(s + 2.0) / (s + 2.0);
            let exact = g(l) - g(delta);
            assert!((q - exact).abs() < 1e-10 * exact, "cells={cells} q={q} exact={exact}");
        }
    }

    #[test]
    fn taylor_band_recovers_the_excluded_segment() {
        let (points, h, gamma) = (2001, 0.01, 2.5);
        let full = |cells| {
            let (c, _, _) = line_weights(
                points,
                h,
                Some(gamma),
                BandConfig {
                    cells,
                    model: BandModel::Taylor,
                },
            )
            .unwrap();
            let s = 2.0 - gamma;
            (1..points).map(|m| c[m] * (m as f64 * h).powf(s)).sum::<f64>()
        };
        // the integrand is exactly z^s so the band term is exact
        assert!((full(1) - full(4)).abs() < 1e-10);
    }

    #[test]
    fn pair_rule_is_symmetric_after_node_weighting() {
        let g = Grid::new_1d(-1.0, 1.0, 21).unwrap();
        let r = PairRule::new(&g, Some(2.5), BandConfig::default()).unwrap();
        let t = r.node_weights();
        for i in 0..21 {
            for j in 0..21 {
                let a = t[i] * r.weight(i, j);
                let b = t[j] * r.weight(j, i);
                assert!((a - b).abs() < 1e-16);
            }
        }
        let g2 = Grid::cube(2, -1.0, 1.0, 5).unwrap();
        assert!(PairRule::new(&g2, Some(2.5), BandConfig::default()).is_err());
        let r2 = PairRule::new(&g2, None, BandConfig::default()).unwrap();
        assert_eq!(r2.weight(3, 3), 0.0);
    }
}
