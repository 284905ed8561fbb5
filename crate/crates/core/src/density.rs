//! Densities on grids: kernel density estimates from samples, the
//! stationary density of the stable Ornstein–Uhlenbeck process, and
//! gradients of log-densities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};

pub use crate::model::stable_constant;

/// Kernel density estimate together with its bookkeeping.
#[derive(Debug, Clone)]
pub struct KdeEstimate {
    pub field: DensityField,
    pub bandwidth: Vec<f64>,
    /// Samples dropped because they fell outside the grid domain.
    pub clipped: usize,
}

/// Gaussian kernel density estimate of `samples` (flattened, `grid.dim()`
/// coordinates per point) on the nodes of `grid`.
///
/// Samples are linearly binned onto a refinement of `grid` whose spacing is
/// at most a quarter bandwidth, then convolved with the Gaussian kernel.
/// The default bandwidth is `n^(-1/5) · std` per axis.
pub fn estimate_density(samples: &[f64], grid: &Grid, bandwidth: Option<&[f64]>, time: f64) -> Result<KdeEstimate> {
    let d = grid.dim();
    if samples.len() % d != 0 {
        return Err(Error::InvalidArgument("sample buffer length is not a multiple of dim".into()));
    }
    let total = samples.len() / d;
    if total < 100 {
        return Err(Error::InsufficientData(format!("{total} samples; at least 100 required")));
    }
    let mut pts: Vec<&[f64]> = samples.chunks(d).filter(|p| grid.contains(p)).collect();
    let clipped = total - pts.len();
    if pts.is_empty() {
        return Err(Error::EmptySupport(total));
    }
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = pts.len();
    let mut h = vec![0.0; d];
    for k in 0..d {
        let mean = pts.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let var = pts.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::DegenerateSample(k));
        }
        h[k] = match bandwidth {
            Some(b) => b[k],
            None => (n as f64).powf(-0.2) * var.sqrt(),
        };
        if !(h[k] > 0.0) {
            return Err(Error::InvalidArgument("bandwidth must be positive".into()));
        }
    }

    // refined binning grid, aligned with the output nodes
    let refine: Vec<usize> = (0..d)
        .map(|k| (grid.spacing(k) / (0.25 * h[k])).ceil().max(1.0) as usize)
        .collect();
    let fine: Vec<usize> = (0..d).map(|k| (grid.axis(k).points - 1) * refine[k] + 1).collect();
    let fine_h: Vec<f64> = (0..d).map(|k| grid.spacing(k) / refine[k] as f64).collect();
    let fine_len: usize = fine.iter().product();
    let mut bins = vec![0.0; fine_len];
    for p in &pts {
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..d {
            let s = (p[k] - grid.axis(k).lower) / fine_h[k];
            let i = (s.floor() as usize).min(fine[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        if d == 1 {
            bins[base[0]] += 1.0 - frac[0];
            bins[base[0] + 1] += frac[0];
        } else {
            let ny = fine[1];
            let (i, j, u, v) = (base[0], base[1], frac[0], frac[1]);
            bins[i * ny + j] += (1.0 - u) * (1.0 - v);
            bins[i * ny + j + 1] += (1.0 - u) * v;
            bins[(i + 1) * ny + j] += u * (1.0 - v);
            bins[(i + 1) * ny + j + 1] += u * v;
        }
    }

    let kernel_taps = |k: usize| -> Vec<f64> {
        let half = (5.0 * h[k] / fine_h[k]).ceil() as usize;
        (0..=2 * half)
            .map(|t| {
                let u = (t as f64 - half as f64) * fine_h[k] / h[k];
                (-0.5 * u * u).exp()
            })
            .collect()
    };
    let values = if d == 1 {
        let taps = kernel_taps(0);
        let half = taps.len() / 2;
        (0..grid.len())
            .map(|i| convolve_at(&bins, &taps, half, i * refine[0]))
            .collect()
    } else {
        let (tx, ty) = (kernel_taps(0), kernel_taps(1));
        let (hx, hy) = (tx.len() / 2, ty.len() / 2);
        let (fx, fy) = (fine[0], fine[1]);
        let (ny, nx) = (grid.axis(1).points, grid.axis(0).points);
        // convolve along y at the output y-nodes, then along x
        let mut stage = vec![0.0; fx * ny];
        let mut col = vec![0.0; fy];
        for i in 0..fx {
            col.copy_from_slice(&bins[i * fy..(i + 1) * fy]);
            for j in 0..ny {
                stage[i * ny + j] = convolve_at(&col, &ty, hy, j * refine[1]);
            }
        }
        let mut out = vec![0.0; nx * ny];
        let mut line = vec![0.0; fx];
        for j in 0..ny {
            for i in 0..fx {
                line[i] = stage[i * ny + j];
            }
            for i in 0..nx {
                out[i * ny + j] = convolve_at(&line, &tx, hx, i * refine[0]);
            }
        }
        out
    };
    let field = DensityField::normalized(grid.clone(), values, time)?;
    Ok(KdeEstimate {
        field,
        bandwidth: h,
        clipped,
    })
}

fn convolve_at(data: &[f64], taps: &[f64], half: usize, center: usize) -> f64 {
    let lo = center.saturating_sub(half);
    let hi = (center + half).min(data.len() - 1);
    (lo..=hi).map(|m| data[m] * taps[m + half - center]).sum()
}

/// Quadrature settings for the stable stationary density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierQuadrature {
    pub xi_max: f64,
    pub xi_nodes: usize,
}

impl FourierQuadrature {
    /// Cutoff where `e^(-ξ^α/α)` falls below `10⁻¹²` (with margin) and a
    /// step of about `10⁻³`.
    pub fn default_for(alpha: f64) -> Self {
        let xi_max = (alpha * 1.1 * 1e12f64.ln()).powf(1.0 / alpha);
        let xi_nodes = (xi_max / 1e-3).ceil() as usize + 1;
        Self { xi_max, xi_nodes }
    }
}

/// Stationary density of `dX = -X dt + dL^α` on a 1D grid.
#[derive(Debug, Clone)]
pub struct StableDensity {
    /// Clipped and renormalized to unit mass on the grid.
    pub field: DensityField,
    /// Pointwise quadrature values before clipping and renormalization.
    pub pointwise: Vec<f64>,
    /// Trapezoidal mass of `pointwise` on the grid.
    pub box_mass: f64,
}

/// `ρ_ss(x) = (1/π) ∫₀^∞ cos(xξ) e^(-ξ^α/α) dξ` by the trapezoid rule on
/// `[0, xi_max]` with `xi_nodes` nodes.
pub fn stable_stationary_density(alpha: f64, grid: &Grid, quad: FourierQuadrature) -> Result<StableDensity> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if grid.dim() != 1 {
        return Err(Error::Unsupported("stable stationary density is 1D".into()));
    }
    let FourierQuadrature { xi_max, xi_nodes } = quad;
    if xi_nodes < 2 || !(xi_max > 0.0) {
        return Err(Error::InvalidArgument("need xi_max > 0 and at least 2 nodes".into()));
    }
    let tail = (-xi_max.powf(alpha) / alpha).exp();
    if tail >= 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "xi_max = {xi_max} leaves e^(-ξ^α/α) = {tail:e} ≥ 1e-12"
        )));
    }
    let h = xi_max / (xi_nodes - 1) as f64;
    let weights: Vec<f64> = (0..xi_nodes)
        .map(|k| {
            let xi = k as f64 * h;
            let w = if k == 0 || k == xi_nodes - 1 { 0.5 * h } else { h };
            w * (-xi.powf(alpha) / alpha).exp()
        })
        .collect();
    let nodes = grid.axis(0).nodes();
    let pointwise: Vec<f64> = nodes
        .par_iter()
        .map(|&x| {
            let x = x.abs();
            let mut acc = [0.0; 4];
            let chunks = weights.chunks_exact(4);
            let rem = chunks.remainder();
            for (c, w) in chunks.enumerate() {
                let k = 4 * c;
                for r in 0..4 {
                    acc[r] += w[r] * (x * ((k + r) as f64 * h)).cos();
                }
            }
            let base = xi_nodes - rem.len();
            let mut s = acc[0] + acc[1] + acc[2] + acc[3];
            for (r, w) in rem.iter().enumerate() {
                s += w * (x * ((base + r) as f64 * h)).cos();
            }
            s / std::f64::consts::PI
        })
        .collect();
    if let Some(v) = pointwise.iter().find(|v| **v < -1e-6) {
        return Err(Error::Resolution(format!(
            "Fourier quadrature produced {v:e}; increase xi_nodes"
        )));
    }
    let clipped: Vec<f64> = pointwise.iter().map(|v| v.max(0.0)).collect();
    let box_mass = grid.integrate(&pointwise);
    let field = DensityField::normalized(grid.clone(), clipped, 0.0)?;
    Ok(StableDensity {
        field,
        pointwise,
        box_mass,
    })
}

/// `∇ log ρ` at the grid nodes.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub grid: Grid,
    /// One vector of nodal values per axis.
    pub components: Vec<Vec<f64>>,
    /// Number of nodes whose density was raised to the floor.
    pub floored: usize,
}

/// Central differences of `log max(ρ, floor)`, second-order one-sided at the
/// boundary. The floor defaults to `10⁻¹² · max ρ`.
pub fn log_density_gradient(field: &DensityField, floor: Option<f64>) -> GradientField {
    let floor = floor.unwrap_or_else(|| field.default_floor());
    let floored = field.values.iter().filter(|v| **v < floor).count();
    let logv = field.log_values(floor);
    GradientField {
        grid: field.grid.clone(),
        components: nodal_gradient(&field.grid, &logv),
        floored,
    }
}

/// Finite-difference gradient of nodal values, one vector per axis.
pub fn nodal_gradient(grid: &Grid, v: &[f64]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let mut comps = vec![vec![0.0; grid.len()]; d];
    for (k, comp) in comps.iter_mut().enumerate() {
        let axis = grid.axis(k);
        let (n, h) = (axis.points, axis.spacing());
        let stride = if d == 1 || k == 1 { 1 } else { grid.axis(1).points };
        for (flat, out) in comp.iter_mut().enumerate() {
            let i = grid.multi(flat)[k];
            let at = |o: isize| v[(flat as isize + o * stride as isize) as usize];
            *out = if n < 3 {
                if i == 0 {
                    (at(1) - at(0)) / h
                } else {
                    (at(0) - at(-1)) / h
                }
            } else if i == 0 {
                (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
            } else {
                (at(1) - at(-1)) / (2.0 * h)
            };
        }
    }
    comps
}
