//! Nonlocal Fokker–Planck equation
//! `∂ₜρ = ∇·(-bρ + β⁻¹A∇ρ) + ∫ k(y,x)ρ(y) - k(x,y)ρ(x) dy`
//! on 1D/2D grids: currents, explicit time stepping, and the stationary
//! residual.
//!
//! The local part is in flux form on cell faces with trapezoid control
//! volumes, and the nonlocal part uses a [`PairRule`] whose node-weighted
//! form is symmetric, so both parts conserve the trapezoidal mass exactly.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::nodal_gradient;
use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid};
use crate::model::{JumpKernel, ProcessSpec};
use crate::quadrature::{log_mean, BandConfig, PairRule};

/// Largest node count for which the dense pair tables are built.
pub const MAX_PAIR_NODES: usize = 4096;

/// Advective part of the face flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Logarithmic-mean flux where the cell Péclet number `|b|h/(β⁻¹A)` is
    /// at most 2, upwind elsewhere (including wherever `A = 0`).
    #[default]
    Auto,
    /// `F = b L(ρ_L, ρ_R) - β⁻¹A (ρ_R - ρ_L)/h` on every face. Second order;
    /// a discrete Gibbs density is an exact zero of this flux when the face
    /// drift equals `-A ΔV/h`.
    LogMean,
    /// First-order upwind advection.
    Upwind,
}

/// Faces normal to one axis.
#[derive(Debug, Clone)]
pub struct FaceSet {
    pub axis: usize,
    pub h: f64,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Normal drift component at the face midpoint.
    pub b: Vec<f64>,
    /// `A_kk` at the face midpoint.
    pub a: Vec<f64>,
    /// `A_kl` (l ≠ k) at the face midpoint, 2D only.
    pub cross: Vec<f64>,
    /// Transverse trapezoid weight (1 in 1D).
    pub length: Vec<f64>,
}

impl FaceSet {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    /// Integration weight of face `f` (`h · length`).
    #[inline]
    pub fn volume(&self, f: usize) -> f64 {
        self.h * self.length[f]
    }
}

/// Precomputed discretization of a spec on a grid.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: Grid,
    pub beta: f64,
    pub band: BandConfig,
    pub rule: PairRule,
    faces: Vec<FaceSet>,
    a_zero: bool,
    a_diagonal: bool,
    nodal_b: Vec<f64>,
    nodal_a: Vec<f64>,
    nonlocal: Option<NonlocalTables>,
    /// Rate of jumps from each node to outside the grid, where the kernel
    /// tail is known in closed form.
    outflow: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct NonlocalTables {
    /// `k(x_i, x_j)`, zero where the pair weight vanishes.
    k: Vec<f64>,
    /// `w_ij k(x_j, x_i)`.
    gain: Vec<f64>,
    /// `Σ_j w_ij k(x_i, x_j)`.
    loss_rate: Vec<f64>,
}

impl Discretization {
    pub fn new(spec: &ProcessSpec, kernel: &JumpKernel, grid: &Grid, band: BandConfig) -> Result<Self> {
        if spec.dim != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "spec dimension {} does not match grid dimension {}",
                spec.dim,
                grid.dim()
            )));
        }
        let d = grid.dim();
        let n = grid.len();
        let a_zero = spec.diffusion.is_zero();
        let mut p = vec![0.0; d];
        let mut bv = vec![0.0; d];
        let mut am = vec![0.0; d * d];

        let mut nodal_b = vec![0.0; n * d];
        let mut nodal_a = vec![0.0; n * d * d];
        let mut a_diagonal = true;
        for i in 0..n {
            grid.point_into(i, &mut p);
            spec.drift.eval(&p, &mut nodal_b[i * d..(i + 1) * d]);
            spec.diffusion.matrix(&p, &mut nodal_a[i * d * d..(i + 1) * d * d]);
            if d == 2 && nodal_a[i * 4 + 1] != 0.0 {
                a_diagonal = false;
            }
        }

        let weights: Vec<Vec<f64>> = grid.axes().iter().map(|a| a.weights()).collect();
        let mut faces = Vec::with_capacity(d);
        for k in 0..d {
            let axis = grid.axis(k);
            let h = axis.spacing();
            let stride = if d == 1 || k == 1 { 1 } else { grid.axis(1).points };
            let mut fs = FaceSet {
                axis: k,
                h,
                left: Vec::new(),
                right: Vec::new(),
                b: Vec::new(),
                a: Vec::new(),
                cross: Vec::new(),
                length: Vec::new(),
            };
            for i in 0..n {
                let m = grid.multi(i);
                if m[k] + 1 >= axis.points {
                    continue;
                }
                let j = i + stride;
                grid.point_into(i, &mut p);
                p[k] += 0.5 * h;
                spec.drift.eval(&p, &mut bv);
                spec.diffusion.matrix(&p, &mut am);
                fs.left.push(i);
                fs.right.push(j);
                fs.b.push(bv[k]);
                fs.a.push(am[k * d + k]);
                if d == 2 {
                    let l = 1 - k;
                    fs.cross.push(am[k * d + l]);
                    if am[k * d + l] != 0.0 {
                        a_diagonal = false;
                    }
                    fs.length.push(weights[l][m[l]]);
                } else {
                    fs.length.push(1.0);
                }
            }
            faces.push(fs);
        }

        let rule = PairRule::new(grid, kernel.singularity_order(), band)?;
        let nonlocal = if kernel.is_zero() {
            None
        } else {
            if n > MAX_PAIR_NODES {
                return Err(Error::Unsupported(format!(
                    "dense pair tables need at most {MAX_PAIR_NODES} nodes, grid has {n}"
                )));
            }
            let pts = grid.points();
            let rows: Vec<Result<Vec<f64>>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let x = &pts[i * d..(i + 1) * d];
                    (0..n)
                        .map(|j| {
                            if rule.weight(i, j) == 0.0 {
                                Ok(0.0)
                            } else {
                                kernel.evaluate(x, &pts[j * d..(j + 1) * d])
                            }
                        })
                        .collect()
                })
                .collect();
            let mut k = Vec::with_capacity(n * n);
            for r in rows {
                k.extend(r?);
            }
            let mut gain = vec![0.0; n * n];
            let mut loss_rate = vec![0.0; n];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    let w = rule.weight(i, j);
                    gain[i * n + j] = w * k[j * n + i];
                    s += w * k[i * n + j];
                }
                loss_rate[i] = s;
            }
            Some(NonlocalTables { k, gain, loss_rate })
        };

        // the outer half cell counts as inside, matching the trapezoid ends
        let outflow = match (d, kernel.stable_tail()) {
            (1, Some((c, alpha))) => {
                let ax = grid.axis(0);
                let half = 0.5 * ax.spacing();
                Some(
                    ax.nodes()
                        .iter()
                        .map(|x| c / alpha * ((x - ax.lower + half).powf(-alpha) + (ax.upper - x + half).powf(-alpha)))
                        .collect(),
                )
            }
            _ => None,
        };

        Ok(Self {
            grid: grid.clone(),
            beta: spec.beta,
            band,
            rule,
            faces,
            a_zero,
            a_diagonal,
            nodal_b,
            nodal_a,
            nonlocal,
            outflow,
        })
    }

    /// Rate of jumps from each node that land outside the grid, when known.
    pub fn outflow_rates(&self) -> Option<&[f64]> {
        self.outflow.as_deref()
    }

    /// Add the fluxes through the grid walls that a density continued past
    /// the walls would carry; the time stepper keeps the walls closed.
    pub fn add_wall_fluxes(&self, rho: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let theta = 1.0 / self.beta;
        for k in 0..d {
            let axis = self.grid.axis(k);
            let h = axis.spacing();
            let m = axis.points;
            let stride = if d == 1 || k == 1 { 1 } else { self.grid.axis(1).points };
            for i in 0..self.len() {
                let pos = if d == 1 { i } else { self.grid.multi(i)[k] };
                let (inner, sign) = if pos == 0 {
                    (i + stride, 1.0)
                } else if pos == m - 1 {
                    (i - stride, -1.0)
                } else {
                    continue;
                };
                let b = self.nodal_b[i * d + k];
                let a = self.nodal_a[i * d * d + k * d + k];
                let grad = sign * (rho[inner] - rho[i]) / h;
                let flux = b * rho[i] - theta * a * grad;
                out[i] += sign * flux / (0.5 * h);
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn faces(&self) -> &[FaceSet] {
        &self.faces
    }

    pub fn node_weights(&self) -> &[f64] {
        self.rule.node_weights()
    }

    pub fn diffusion_is_zero(&self) -> bool {
        self.a_zero
    }

    /// True when `A` has no off-diagonal entries anywhere on the grid.
    pub fn diffusion_is_diagonal(&self) -> bool {
        self.a_diagonal
    }

    pub fn has_jumps(&self) -> bool {
        self.nonlocal.is_some()
    }

    pub fn nodal_drift(&self) -> &[f64] {
        &self.nodal_b
    }

    pub fn nodal_diffusion(&self) -> &[f64] {
        &self.nodal_a
    }

    /// `k(x_i, x_j)` (zero inside the excluded band), or `None` without jumps.
    pub fn kernel_matrix(&self) -> Option<&[f64]> {
        self.nonlocal.as_ref().map(|t| t.k.as_slice())
    }

    /// Total jump rate `R(x_i) = Σ_j w_ij k(x_i, x_j)`.
    pub fn jump_rates(&self) -> Option<&[f64]> {
        self.nonlocal.as_ref().map(|t| t.loss_rate.as_slice())
    }

    #[inline]
    fn face_uses_log_mean(&self, fs: &FaceSet, f: usize, scheme: FluxScheme) -> bool {
        match scheme {
            FluxScheme::LogMean => true,
            FluxScheme::Upwind => false,
            FluxScheme::Auto => fs.a[f] > 0.0 && fs.b[f].abs() * fs.h <= 2.0 * fs.a[f] / self.beta,
        }
    }

    /// Face fluxes `F ≈ bρ - β⁻¹A∇ρ` (normal component), one vector per axis.
    pub fn face_fluxes(&self, rho: &[f64], scheme: FluxScheme) -> Vec<Vec<f64>> {
        let theta = 1.0 / self.beta;
        let grad = if self.a_diagonal {
            None
        } else {
            Some(nodal_gradient(&self.grid, rho))
        };
        self.faces
            .iter()
            .map(|fs| {
                (0..fs.len())
                    .map(|f| {
                        let (l, r) = (fs.left[f], fs.right[f]);
                        let (rl, rr) = (rho[l], rho[r]);
                        let adv = if self.face_uses_log_mean(fs, f, scheme) {
                            fs.b[f] * log_mean(rl, rr)
                        } else {
                            fs.b[f].max(0.0) * rl + fs.b[f].min(0.0) * rr
                        };
                        let mut flux = adv - theta * fs.a[f] * (rr - rl) / fs.h;
                        if let Some(g) = &grad {
                            let other = &g[1 - fs.axis];
                            flux -= theta * fs.cross[f] * 0.5 * (other[l] + other[r]);
                        }
                        flux
                    })
                    .collect()
            })
            .collect()
    }

    /// Local part `∇·(-bρ + β⁻¹A∇ρ)` at every node, from face fluxes.
    pub fn local_operator(&self, rho: &[f64], scheme: FluxScheme, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let fluxes = self.face_fluxes(rho, scheme);
        self.accumulate_divergence(&fluxes, out);
    }

    fn accumulate_divergence(&self, fluxes: &[Vec<f64>], out: &mut [f64]) {
        let tau = self.node_weights();
        for (fs, fl) in self.faces.iter().zip(fluxes) {
            for f in 0..fs.len() {
                let q = fl[f] * fs.length[f];
                out[fs.left[f]] -= q / tau[fs.left[f]];
                out[fs.right[f]] += q / tau[fs.right[f]];
            }
        }
    }

    /// Nonlocal part `Σ_j w_ij (k(x_j,x_i)ρ_j - k(x_i,x_j)ρ_i)`, added to `out`.
    pub fn nonlocal_operator_add(&self, rho: &[f64], out: &mut [f64]) {
        let t = match &self.nonlocal {
            Some(t) => t,
            None => return,
        };
        let n = self.len();
        let gains: Vec<f64> = t.gain.par_chunks(n).map(|row| dot(row, rho)).collect();
        for i in 0..n {
            out[i] += gains[i] - t.loss_rate[i] * rho[i];
        }
    }

    /// Full operator `𝓛*ρ` at every node.
    pub fn apply(&self, rho: &[f64], scheme: FluxScheme, out: &mut [f64]) {
        self.local_operator(rho, scheme, out);
        self.nonlocal_operator_add(rho, out);
    }

    /// Backward generator `𝓛f = b·∇f + β⁻¹∇·(A∇f) + Σ_j w_ij k_ij (f_j - f_i)`.
    pub fn generator(&self, f: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let n = self.len();
        let grad = nodal_gradient(&self.grid, f);
        for i in 0..n {
            out[i] = (0..d).map(|k| self.nodal_b[i * d + k] * grad[k][i]).sum();
        }
        if !self.a_zero {
            let theta = 1.0 / self.beta;
            let tau = self.node_weights();
            for fs in &self.faces {
                for e in 0..fs.len() {
                    let (l, r) = (fs.left[e], fs.right[e]);
                    let mut q = fs.a[e] * (f[r] - f[l]) / fs.h;
                    if !self.a_diagonal {
                        let other = &grad[1 - fs.axis];
                        q += fs.cross[e] * 0.5 * (other[l] + other[r]);
                    }
                    q *= theta * fs.length[e];
                    out[l] += q / tau[l];
                    out[r] -= q / tau[r];
                }
            }
        }
        if let Some(t) = &self.nonlocal {
            let rows: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let fi = f[i];
                    (0..n)
                        .map(|j| self.rule.weight(i, j) * t.k[i * n + j] * (f[j] - fi))
                        .sum()
                })
                .collect();
            for i in 0..n {
                out[i] += rows[i];
            }
        }
    }

    /// Explicit Euler stability bound
    /// `0.4 · min(h²β/(2·dim·max A), 1/max R, h/max|b|)`.
    pub fn stability_bound(&self) -> f64 {
        let d = self.grid.dim() as f64;
        let mut bound = f64::INFINITY;
        for fs in &self.faces {
            for f in 0..fs.len() {
                if fs.a[f] > 0.0 {
                    bound = bound.min(fs.h * fs.h * self.beta / (2.0 * d * fs.a[f]));
                }
                if fs.b[f] != 0.0 {
                    bound = bound.min(fs.h / fs.b[f].abs());
                }
            }
        }
        if let Some(t) = &self.nonlocal {
            let rmax = t.loss_rate.iter().cloned().fold(0.0, f64::max);
            if rmax > 0.0 {
                bound = bound.min(1.0 / rmax);
            }
        }
        0.4 * bound
    }

    /// Nodal currents `j^loc = bρ - β⁻¹A∇ρ` with central-difference `∇ρ`.
    pub fn nodal_local_current(&self, rho: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        let n = self.len();
        let grad = nodal_gradient(&self.grid, rho);
        let theta = 1.0 / self.beta;
        let mut j = vec![0.0; n * d];
        for i in 0..n {
            for k in 0..d {
                let mut v = self.nodal_b[i * d + k] * rho[i];
                for l in 0..d {
                    v -= theta * self.nodal_a[i * d * d + k * d + l] * grad[l][i];
                }
                j[i * d + k] = v;
            }
        }
        j
    }

    /// Dense pair matrix `j^nl_ij = ρ_i k_ij - ρ_j k_ji`, zero in the band.
    pub fn nonlocal_current(&self, rho: &[f64]) -> Vec<f64> {
        let n = self.len();
        match &self.nonlocal {
            None => vec![0.0; n * n],
            Some(t) => {
                let mut j = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        j[a * n + b] = rho[a] * t.k[a * n + b] - rho[b] * t.k[b * n + a];
                    }
                }
                j
            }
        }
    }
}

/// Four-accumulator dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Local and nonlocal probability currents of a density.
#[derive(Debug, Clone)]
pub struct CurrentField {
    pub grid: Grid,
    /// Nodal `j^loc`, `dim` components per node.
    pub local: Vec<f64>,
    /// Dense `j^nl(x_i, y_j)`, row-major `n × n`.
    pub nonlocal: Vec<f64>,
    /// Band half-width `δ_diag`; entries with zero pair weight are set to 0.
    pub delta_diag: f64,
    /// Number of off-diagonal pairs excluded by the band.
    pub excluded_pairs: usize,
    /// Pair quadrature matching `nonlocal`.
    pub rule: PairRule,
}

/// `j^loc = bρ - β⁻¹A∇ρ` at the nodes of `field`.
pub fn local_current(spec: &ProcessSpec, field: &DensityField) -> Result<Vec<f64>> {
    let disc = Discretization::new(spec, &JumpKernel::zero(), &field.grid, BandConfig::default())?;
    Ok(disc.nodal_local_current(&field.values))
}

/// `j^nl(x, y) = ρ(x)k(x, y) - ρ(y)k(y, x)` on all node pairs.
pub fn nonlocal_current(kernel: &JumpKernel, field: &DensityField, band: BandConfig) -> Result<CurrentField> {
    let d = field.grid.dim();
    let spec = ProcessSpec::new("currents", d);
    let disc = Discretization::new(&spec, kernel, &field.grid, band)?;
    currents(&disc, field)
}

/// Both currents from a prepared discretization.
pub fn currents(disc: &Discretization, field: &DensityField) -> Result<CurrentField> {
    let n = disc.len();
    let excluded = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && disc.rule.weight(i, j) == 0.0)
        .count();
    Ok(CurrentField {
        grid: field.grid.clone(),
        local: disc.nodal_local_current(&field.values),
        nonlocal: disc.nonlocal_current(&field.values),
        delta_diag: disc.rule.delta(),
        excluded_pairs: if disc.has_jumps() { excluded } else { 0 },
        rule: disc.rule.clone(),
    })
}

/// Settings for [`solve_fpe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpeConfig {
    pub t_final: f64,
    /// Time step; `None` uses the stability bound.
    pub dt: Option<f64>,
    /// Time between stored snapshots.
    pub snapshot_interval: f64,
    pub scheme: FluxScheme,
    pub band: BandConfig,
}

impl FpeConfig {
    pub fn new(t_final: f64, snapshot_interval: f64) -> Self {
        Self {
            t_final,
            dt: None,
            snapshot_interval,
            scheme: FluxScheme::Auto,
            band: BandConfig::default(),
        }
    }
}

/// Output of [`solve_fpe`].
#[derive(Debug, Clone)]
pub struct FpeRun {
    pub snapshots: Vec<DensityField>,
    pub dt: f64,
    pub steps: usize,
    pub stability_bound: f64,
    /// `|mass - 1|` after each step, before renormalization.
    pub step_mass_drift: Vec<f64>,
}

impl FpeRun {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Largest accumulated mass drift over any window of 1000 steps.
    pub fn mass_drift_per_1000_steps(&self) -> f64 {
        let d = &self.step_mass_drift;
        let w = 1000.min(d.len());
        if w == 0 {
            return 0.0;
        }
        let mut s: f64 = d[..w].iter().sum();
        let mut best = s;
        for i in w..d.len() {
            s += d[i] - d[i - w];
            best = best.max(s);
        }
        best
    }

    /// Write `rho_t{index}.csv` files plus `manifest.json` into `dir`,
    /// returning the written file names.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (i, s) in self.snapshots.iter().enumerate() {
            let name = format!("rho_t{i}.csv");
            s.save_csv(dir.join(&name))?;
            names.push(name);
        }
        let grid = &self.snapshots[0].grid;
        let manifest = serde_json::json!({
            "times": self.times(),
            "grid": grid,
            "mass_drift": self.mass_drift_per_1000_steps(),
            "stability_bound": self.stability_bound,
            "dt": self.dt,
            "steps": self.steps,
            "files": names,
        });
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&manifest)?)?;
        names.push("manifest.json".into());
        Ok(names)
    }
}

/// Explicit Euler integration of the nonlocal Fokker–Planck equation.
pub fn solve_fpe(spec: &ProcessSpec, kernel: &JumpKernel, rho0: &DensityField, config: &FpeConfig) -> Result<FpeRun> {
    let disc = Discretization::new(spec, kernel, &rho0.grid, config.band)?;
    solve_fpe_with(&disc, rho0, config)
}

/// [`solve_fpe`] on a prepared discretization.
pub fn solve_fpe_with(disc: &Discretization, rho0: &DensityField, config: &FpeConfig) -> Result<FpeRun> {
    if !(config.t_final > 0.0 && config.snapshot_interval > 0.0) {
        return Err(Error::InvalidArgument("t_final and snapshot interval must be positive".into()));
    }
    let bound = disc.stability_bound();
    let dt_target = match config.dt {
        Some(dt) if dt > bound => return Err(Error::Stability { dt, bound }),
        Some(dt) if dt > 0.0 => dt,
        Some(dt) => return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}"))),
        None => bound,
    };
    let frames = (config.t_final / config.snapshot_interval).round().max(1.0) as usize;
    let interval = config.t_final / frames as f64;
    let sub = (interval / dt_target).ceil().max(1.0) as usize;
    let dt = interval / sub as f64;

    let tau = disc.node_weights().to_vec();
    let mass = |v: &[f64]| tau.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let mut rho = rho0.values.clone();
    let m0 = mass(&rho);
    rho.iter_mut().for_each(|v| *v /= m0);
    let mut rate = vec![0.0; rho.len()];
    let mut snapshots = vec![DensityField {
        grid: rho0.grid.clone(),
        values: rho.clone(),
        time: rho0.time,
    }];
    let mut drift = Vec::with_capacity(frames * sub);
    let mut t = rho0.time;
    for frame in 0..frames {
        for _ in 0..sub {
            disc.apply(&rho, config.scheme, &mut rate);
            for (r, q) in rho.iter_mut().zip(&rate) {
                *r += dt * q;
            }
            t += dt;
            if let Some(min) = rho.iter().cloned().reduce(f64::min) {
                if min < -1e-8 {
                    return Err(Error::Instability { time: t, value: min });
                }
            }
            rho.iter_mut().for_each(|v| *v = v.max(0.0));
            let m = mass(&rho);
            drift.push((m - 1.0).abs());
            rho.iter_mut().for_each(|v| *v /= m);
        }
        let time = rho0.time + (frame + 1) as f64 * interval;
        snapshots.push(DensityField {
            grid: rho0.grid.clone(),
            values: rho.clone(),
            time,
        });
    }
    Ok(FpeRun {
        snapshots,
        dt,
        steps: frames * sub,
        stability_bound: bound,
        step_mass_drift: drift,
    })
}

/// Trapezoidal L¹ norm of `𝓛*ρ`, with the logarithmic-mean flux, for `ρ`
/// continued past the grid: walls pass flux, and jumps that leave the grid
/// count as losses when the kernel tail is known.
pub fn stationary_residual(spec: &ProcessSpec, kernel: &JumpKernel, field: &DensityField, band: BandConfig) -> Result<f64> {
    let disc = Discretization::new(spec, kernel, &field.grid, band)?;
    Ok(stationary_residual_with(&disc, field, FluxScheme::LogMean))
}

pub fn stationary_residual_with(disc: &Discretization, field: &DensityField, scheme: FluxScheme) -> f64 {
    let mut out = vec![0.0; disc.len()];
    disc.apply(&field.values, scheme, &mut out);
    disc.add_wall_fluxes(&field.values, &mut out);
    if let Some(q) = disc.outflow_rates() {
        for ((o, r), q) in out.iter_mut().zip(&field.values).zip(q) {
            *o -= q * r;
        }
    }
    let abs: Vec<f64> = out.iter().map(|v| v.abs()).collect();
    field.grid.integrate(&abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{stable_stationary_density, FourierQuadrature};
    use crate::model::{build_jump_kernel, Diffusion, Drift, JumpMap, LevyDensity};
    use crate::quadrature::BandModel;

    fn gauss(x: f64, m: f64, v: f64) -> f64 {
        (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    fn ex1() -> ProcessSpec {
        ProcessSpec::new("ex1", 1)
            .with_drift(Drift::gradient_quadratic(1, 1.0, None))
            .with_diffusion(Diffusion::identity(1, 1.0))
            .with_jumps(
                1.0,
                LevyDensity::Gaussian {
                    amplitude: 1.0,
                    mean: vec![0.0],
                    std: 1.0,
                },
                JumpMap::Relocate,
            )
    }

    fn ex2(alpha: f64) -> ProcessSpec {
        ProcessSpec::new("ex2", 1)
            .with_drift(Drift::gradient_quadratic(1, 1.0, None))
            .with_jumps(1.0, LevyDensity::stable(1, alpha), JumpMap::Identity)
    }

    #[test]
    fn heat_equation_matches_closed_form() {
        let spec = ProcessSpec::new("heat", 1).with_diffusion(Diffusion::identity(1, 1.0));
        let grid = Grid::new_1d(-10.0, 10.0, 801).unwrap();
        let rho0 = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 0.0, 0.25)).unwrap();
        let run = solve_fpe(&spec, &JumpKernel::zero(), &rho0, &FpeConfig::new(0.375, 0.375)).unwrap();
        let last = run.snapshots.last().unwrap();
        let exact: Vec<f64> = grid.axis(0).nodes().iter().map(|&x| gauss(x, 0.0, 1.0)).collect();
        assert!(last.l1_distance(&exact) < 5e-3);
    }

    #[test]
    fn one_step_conserves_mass() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 321).unwrap();
        let rho = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 1.0, 0.5)).unwrap();
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        let mut out = vec![0.0; grid.len()];
        disc.apply(&rho.values, FluxScheme::Auto, &mut out);
        let dm = grid.integrate(&out);
        assert!(dm.abs() < 1e-12, "{dm}");

        let s2 = ex2(1.5);
        let k2 = build_jump_kernel(&s2).unwrap();
        let g2 = Grid::new_1d(-20.0, 20.0, 401).unwrap();
        let r2 = DensityField::from_fn(g2.clone(), 0.0, |p| gauss(p[0], 2.0, 4.0)).unwrap();
        let d2 = Discretization::new(&s2, &k2, &g2, BandConfig::default()).unwrap();
        let mut o2 = vec![0.0; g2.len()];
        d2.apply(&r2.values, FluxScheme::Auto, &mut o2);
        assert!(g2.integrate(&o2).abs() < 1e-12);
    }

    #[test]
    fn gibbs_density_is_stationary_for_example_one() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 641).unwrap();
        let gibbs = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 0.0, 1.0)).unwrap();
        let res = stationary_residual(&spec, &k, &gibbs, BandConfig::default()).unwrap();
        assert!(res < 1e-3, "{res}");
        let run = solve_fpe(&spec, &k, &gibbs, &FpeConfig::new(1.0, 0.25)).unwrap();
        for s in &run.snapshots {
            let sup = s
                .values
                .iter()
                .zip(&gibbs.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(sup < 1e-3);
        }
        // a shifted Gaussian is far from stationary
        let off = DensityField::from_fn(grid, 0.0, |p| gauss(p[0], 1.0, 1.0)).unwrap();
        let r_off = stationary_residual(&spec, &k, &off, BandConfig::default()).unwrap();
        assert!(r_off > 10.0 * res.max(1e-6));
    }

    #[test]
    fn residual_converges_under_refinement() {
        // the face drift differs from -ΔV/h at O(h²), so the exact Gibbs
        // density is not a discrete zero
        let spec = ProcessSpec::new("tilted", 1)
            .with_drift(Drift::custom("tilted", |x, o| o[0] = -x[0] + 0.3 * x[0].sin()))
            .with_diffusion(Diffusion::identity(1, 1.0));
        let res = |n: usize| {
            let g = Grid::new_1d(-10.0, 10.0, n).unwrap();
            let v: Vec<f64> = g
                .axis(0)
                .nodes()
                .iter()
                .map(|x| (-0.5 * x * x - 0.3 * x.cos()).exp())
                .collect();
            let f = DensityField::normalized(g, v, 0.0).unwrap();
            stationary_residual(&spec, &JumpKernel::zero(), &f, BandConfig::default()).unwrap()
        };
        let (coarse, fine) = (res(101), res(201));
        assert!(coarse / fine >= 3.0, "{coarse} {fine}");
    }

    #[test]
    fn example_two_fourier_density_is_nearly_stationary() {
        let spec = ex2(1.5);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-40.0, 40.0, 1601).unwrap();
        let rho = stable_stationary_density(1.5, &grid, FourierQuadrature::default_for(1.5)).unwrap();
        let band = BandConfig {
            cells: 2,
            model: BandModel::Taylor,
        };
        let res = stationary_residual(&spec, &k, &rho.field, band).unwrap();
        assert!(res < 1e-2, "{res}");
    }

    #[test]
    fn currents_identities() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-6.0, 6.0, 121).unwrap();
        let gibbs = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 0.0, 1.0)).unwrap();
        let c = nonlocal_current(&k, &gibbs, BandConfig::default()).unwrap();
        let scale = gibbs.max() * 1.0;
        assert!(c.nonlocal.iter().all(|v| v.abs() < 1e-15 * scale.max(1.0)));

        let sym = build_jump_kernel(&ex2(1.5)).unwrap();
        let skew = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 0.7, 1.3)).unwrap();
        let c = nonlocal_current(&sym, &skew, BandConfig::default()).unwrap();
        let n = grid.len();
        let x = grid.axis(0).nodes();
        for i in (0..n).step_by(7) {
            for j in (0..n).step_by(5) {
                let a = c.nonlocal[i * n + j];
                let b = c.nonlocal[j * n + i];
                assert_eq!(a, -b);
                if i.abs_diff(j) >= 1 {
                    let kv = sym.rate(&[x[i]], &[x[j]]);
                    let expect = kv * (skew.values[i] - skew.values[j]);
                    let scale = kv * (skew.values[i] + skew.values[j]);
                    assert!((a - expect).abs() <= 1e-13 * scale);
                }
            }
        }
        assert_eq!(c.excluded_pairs, 0);
    }

    #[test]
    fn local_current_examples() {
        let grid = Grid::new_1d(-8.0, 8.0, 641).unwrap();
        let h = grid.spacing(0);
        let rho = DensityField::from_fn(grid.clone(), 0.0, |p| gauss(p[0], 0.0, 1.0)).unwrap();
        let free = ProcessSpec::new("bm", 1).with_diffusion(Diffusion::identity(1, 1.0));
        let j = local_current(&free, &rho).unwrap();
        for (i, x) in grid.axis(0).nodes().iter().enumerate().skip(1).take(639) {
            assert!((j[i] - x * rho.values[i]).abs() < h * h);
        }
        let ou = free.clone().with_drift(Drift::gradient_quadratic(1, 1.0, None));
        let j = local_current(&ou, &rho).unwrap();
        assert!(j.iter().skip(1).take(639).all(|v| v.abs() < h * h));
        let pure = ProcessSpec::new("ode", 1).with_drift(Drift::gradient_quadratic(1, 1.0, None));
        let j = local_current(&pure, &rho).unwrap();
        for (i, x) in grid.axis(0).nodes().iter().enumerate() {
            assert_eq!(j[i], -x * rho.values[i]);
        }
    }

    #[test]
    fn dt_above_bound_is_rejected() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 161).unwrap();
        let rho = DensityField::from_fn(grid, 0.0, |p| gauss(p[0], 0.0, 1.0)).unwrap();
        let mut cfg = FpeConfig::new(0.1, 0.1);
        cfg.dt = Some(1.0);
        assert!(matches!(solve_fpe(&spec, &k, &rho, &cfg), Err(Error::Stability { .. })));
    }

    #[test]
    fn two_dimensional_mass_conservation() {
        let spec = ProcessSpec::new("rot", 2)
            .with_drift(Drift::linear(vec![-1.0, 1.0, -1.0, -1.0], None))
            .with_diffusion(Diffusion::Constant {
                factor: vec![1.0, 0.0, 0.5, 0.8],
            })
            .with_jumps(
                0.5,
                LevyDensity::Gaussian {
                    amplitude: 1.0,
                    mean: vec![0.0, 0.0],
                    std: 0.5,
                },
                JumpMap::Identity,
            );
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::cube(2, -5.0, 5.0, 31).unwrap();
        let rho = DensityField::from_fn(grid.clone(), 0.0, |p| {
            gauss(p[0], 1.0, 0.5) * gauss(p[1], -0.5, 0.7)
        })
        .unwrap();
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        assert!(!disc.diffusion_is_diagonal());
        let mut out = vec![0.0; grid.len()];
        disc.apply(&rho.values, FluxScheme::Auto, &mut out);
        assert!(grid.integrate(&out).abs() < 1e-12);
        let run = solve_fpe_with(&disc, &rho, &FpeConfig::new(0.2, 0.1)).unwrap();
        assert!(run.mass_drift_per_1000_steps() < 1e-6);
    }
}
