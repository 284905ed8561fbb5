//! Thermodynamic functionals of a density evolving under the nonlocal
//! Fokker–Planck equation: Gibbs entropy, internal energy, work rate, heat
//! dissipation, entropy production rate and free energy.
//!
//! The series evaluator works on face fluxes and node-pair weights of a
//! [`Discretization`], so `dS/dt = e_p + h_d` and, for gradient systems with
//! equilibrium kernels, `dF/dt = -θ e_p` hold for the semi-discrete
//! equation up to round-off.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fokker_planck::{CurrentField, Discretization, FpeRun};
use crate::grid::{fmt17, DensityField};
use crate::model::{JumpKernel, PairFn, ProcessSpec, ScalarFn, VecFn};
use crate::quadrature::{gauss_legendre_on, BandConfig};

/// Skipped-pair mass fraction above which an EPR result carries a warning.
pub const COVERAGE_LIMIT: f64 = 0.01;

/// Split of the drift and kernel into conservative and driving parts:
/// `A⁻¹b = -∇V + f^loc` and `k(x,y)/k(y,x) = exp(β(f^nl(x,y) + V(x) - V(y)))`.
#[derive(Clone)]
pub struct ForceDecomposition {
    pub dim: usize,
    pub potential: ScalarFn,
    pub local_external: VecFn,
    pub nonlocal_driving: Option<PairFn>,
}

impl std::fmt::Debug for ForceDecomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForceDecomposition")
            .field("dim", &self.dim)
            .field("nonlocal_driving", &self.nonlocal_driving.is_some())
            .finish()
    }
}

impl ForceDecomposition {
    /// Pure potential, no external driving.
    pub fn gradient(dim: usize, potential: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            potential: Arc::new(potential),
            local_external: Arc::new(|_, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            nonlocal_driving: None,
        }
    }

    pub fn with_local_external(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.local_external = Arc::new(f);
        self
    }

    pub fn with_nonlocal_driving(mut self, f: PairFn) -> Self {
        self.nonlocal_driving = Some(f);
        self
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        (self.potential)(x)
    }

    pub fn local(&self, x: &[f64], out: &mut [f64]) {
        (self.local_external)(x, out)
    }

    /// `f^nl(x, y)`, zero when no driving is attached.
    pub fn nonlocal(&self, x: &[f64], y: &[f64]) -> f64 {
        self.nonlocal_driving.as_ref().map_or(0.0, |f| f(x, y))
    }

    /// Max of `|A⁻¹b + ∇V - f^loc|` over `probes`, with a central
    /// difference of step `1e-5` for `∇V`.
    pub fn consistency_error(&self, spec: &ProcessSpec, probes: &[Vec<f64>]) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        let (mut b, mut a, mut f) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d]);
        for p in probes {
            spec.drift.eval(p, &mut b);
            spec.diffusion.matrix(p, &mut a);
            let ainv_b = match solve_small(&a, &b) {
                Some(v) => v,
                None => continue,
            };
            self.local(p, &mut f);
            for k in 0..d {
                let mut q = p.clone();
                q[k] += 1e-5;
                let vp = self.potential(&q);
                q[k] -= 2e-5;
                let vm = self.potential(&q);
                let grad = (vp - vm) / 2e-5;
                worst = worst.max((ainv_b[k] + grad - f[k]).abs());
            }
        }
        worst
    }
}

fn solve_small(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    match b.len() {
        1 => (a[0] > 0.0).then(|| vec![b[0] / a[0]]),
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            (det > 0.0).then(|| vec![(a[3] * b[0] - a[1] * b[1]) / det, (a[0] * b[1] - a[2] * b[0]) / det])
        }
        _ => None,
    }
}

/// 1D decomposition `V(x) = -∫_{ref}^{x} A⁻¹(b - A f^loc) ds` for a constant
/// external force `f^loc` (0 by default).
pub fn decompose_forces_1d(spec: &ProcessSpec, reference_point: f64) -> Result<ForceDecomposition> {
    decompose_forces_1d_with(spec, reference_point, 0.0)
}

pub fn decompose_forces_1d_with(spec: &ProcessSpec, reference_point: f64, local_external: f64) -> Result<ForceDecomposition> {
    if spec.dim != 1 {
        return Err(Error::InvalidArgument("force decomposition by quadrature is 1D only".into()));
    }
    let drift = spec.drift.clone();
    let diffusion = spec.diffusion.clone();
    for i in 0..=40 {
        let x = [reference_point - 10.0 + 0.5 * i as f64];
        let (mut b, mut a) = ([0.0], [0.0]);
        drift.eval(&x, &mut b);
        diffusion.matrix(&x, &mut a);
        if a[0] <= 0.0 && b[0] != 0.0 {
            return Err(Error::Assumption(format!(
                "A vanishes at x = {} where b = {}",
                x[0], b[0]
            )));
        }
    }
    let integrand = move |s: f64| {
        let (mut b, mut a) = ([0.0], [0.0]);
        drift.eval(&[s], &mut b);
        diffusion.matrix(&[s], &mut a);
        if a[0] > 0.0 {
            b[0] / a[0] - local_external
        } else {
            0.0
        }
    };
    let potential = move |x: &[f64]| {
        let (lo, hi) = (reference_point, x[0]);
        let panels = ((hi - lo).abs() / 0.25).ceil().max(1.0) as usize;
        let w = (hi - lo) / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let a = lo + p as f64 * w;
            let (nodes, weights) = gauss_legendre_on(8, a, a + w);
            s += nodes.iter().zip(&weights).map(|(t, q)| q * integrand(*t)).sum::<f64>();
        }
        -s
    };
    Ok(ForceDecomposition::gradient(1, potential).with_local_external(move |_, out| out[0] = local_external))
}

/// `f^nl(x,y) = β⁻¹ log(k(x,y)/k(y,x)) - (V(x) - V(y))`, antisymmetric by
/// construction.
#[derive(Clone)]
pub struct JumpDriving {
    kernel: JumpKernel,
    potential: ScalarFn,
    beta: f64,
}

impl JumpDriving {
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let kxy = self.kernel.evaluate(x, y)?;
        let kyx = self.kernel.evaluate(y, x)?;
        if (kxy > 0.0) != (kyx > 0.0) {
            return Err(Error::KernelPositivity {
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        if kxy == 0.0 {
            return Ok(0.0);
        }
        let lr = kxy.ln() - kyx.ln();
        Ok(lr / self.beta - ((self.potential)(x) - (self.potential)(y)))
    }

    /// Infallible form for attaching to a [`ForceDecomposition`]; pairs where
    /// the kernel is one-sided evaluate to NaN.
    pub fn into_pair_fn(self) -> PairFn {
        Arc::new(move |x, y| self.evaluate(x, y).unwrap_or(f64::NAN))
    }
}

pub fn decompose_jump_driving(kernel: &JumpKernel, decomposition: &ForceDecomposition, beta: f64) -> JumpDriving {
    JumpDriving {
        kernel: kernel.clone(),
        potential: decomposition.potential.clone(),
        beta,
    }
}

/// `S = -∫ρ log ρ` by the trapezoid rule, `0 log 0 = 0`.
pub fn gibbs_entropy(field: &DensityField) -> f64 {
    let v: Vec<f64> = field
        .values
        .iter()
        .map(|&r| if r > 0.0 { -r * r.ln() } else { 0.0 })
        .collect();
    field.grid.integrate(&v)
}

/// `U = ∫Vρ`.
pub fn internal_energy(field: &DensityField, decomposition: &ForceDecomposition) -> f64 {
    let d = field.grid.dim();
    let mut p = vec![0.0; d];
    let v: Vec<f64> = (0..field.grid.len())
        .map(|i| {
            field.grid.point_into(i, &mut p);
            decomposition.potential(&p) * field.values[i]
        })
        .collect();
    field.grid.integrate(&v)
}

/// `dW/dt = ∫f^loc·j^loc + ½∬ j^nl f^nl`, with nodal currents.
pub fn work_rate(field: &DensityField, currents: &CurrentField, decomposition: &ForceDecomposition) -> f64 {
    let grid = &field.grid;
    let d = grid.dim();
    let n = grid.len();
    let pts = grid.points();
    let mut f = vec![0.0; d];
    let local: Vec<f64> = (0..n)
        .map(|i| {
            decomposition.local(&pts[i * d..(i + 1) * d], &mut f);
            (0..d).map(|k| f[k] * currents.local[i * d + k]).sum()
        })
        .collect();
    let mut w = grid.integrate(&local);
    if decomposition.nonlocal_driving.is_some() {
        let tau = currents.rule.node_weights();
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = &pts[i * d..(i + 1) * d];
                (0..n)
                    .map(|j| {
                        let wij = currents.rule.weight(i, j);
                        let jn = currents.nonlocal[i * n + j];
                        if wij == 0.0 || jn == 0.0 {
                            0.0
                        } else {
                            wij * jn * decomposition.nonlocal(x, &pts[j * d..(j + 1) * d])
                        }
                    })
                    .sum::<f64>()
                    * tau[i]
            })
            .collect();
        w += 0.5 * rows.iter().sum::<f64>();
    }
    w
}

/// `h_d = -β∫bᵀA⁻¹ j^loc - ½∬ j^nl log(k(x,y)/k(y,x))`, with nodal currents.
/// The local term is 0 when `A ≡ 0`.
pub fn heat_dissipation(spec: &ProcessSpec, kernel: &JumpKernel, field: &DensityField, currents: &CurrentField) -> Result<f64> {
    let grid = &field.grid;
    let d = grid.dim();
    let n = grid.len();
    let pts = grid.points();
    let mut h = 0.0;
    if !spec.diffusion.is_zero() {
        let (mut b, mut a) = (vec![0.0; d], vec![0.0; d * d]);
        let local: Vec<f64> = (0..n)
            .map(|i| {
                let x = &pts[i * d..(i + 1) * d];
                spec.drift.eval(x, &mut b);
                spec.diffusion.matrix(x, &mut a);
                match solve_small(&a, &b) {
                    Some(ainv_b) => (0..d).map(|k| ainv_b[k] * currents.local[i * d + k]).sum(),
                    None => 0.0,
                }
            })
            .collect();
        h -= spec.beta * grid.integrate(&local);
    }
    if !kernel.is_zero() && !kernel.is_symmetric() {
        let floor = field.default_floor();
        let tau = currents.rule.node_weights();
        let rows: Vec<Result<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = &pts[i * d..(i + 1) * d];
                let mut s = 0.0;
                for j in 0..n {
                    let wij = currents.rule.weight(i, j);
                    if wij == 0.0 {
                        continue;
                    }
                    let y = &pts[j * d..(j + 1) * d];
                    let (kxy, kyx) = (kernel.rate(x, y), kernel.rate(y, x));
                    if kxy == kyx {
                        continue;
                    }
                    if kxy <= 0.0 || kyx <= 0.0 {
                        if field.values[i] > floor && field.values[j] > floor {
                            return Err(Error::KernelPositivity {
                                x: x.to_vec(),
                                y: y.to_vec(),
                            });
                        }
                        continue;
                    }
                    s += wij * currents.nonlocal[i * n + j] * (kxy.ln() - kyx.ln());
                }
                Ok(s * tau[i])
            })
            .collect();
        let mut total = 0.0;
        for r in rows {
            total += r?;
        }
        h -= 0.5 * total;
    }
    Ok(h)
}

/// Entropy production rate split into local and nonlocal parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EprResult {
    pub local: f64,
    pub nonlocal: f64,
    pub total: f64,
    /// Pairs skipped because a density was below the floor.
    pub skipped_pairs: usize,
    /// Share of `∬ρk` carried by skipped pairs.
    pub skipped_mass: f64,
    pub coverage_warning: bool,
    /// Density floor used.
    pub floor: f64,
}

/// EPR of `field`:
/// local `β∫(A⁻¹b - β⁻¹∇log ρ)ᵀA(…)ρ` on face fluxes, nonlocal
/// `½∬ j^nl log(ρk/ρ'k')` with the pair quadrature.
pub fn entropy_production_rate(spec: &ProcessSpec, kernel: &JumpKernel, field: &DensityField) -> Result<EprResult> {
    entropy_production_rate_banded(spec, kernel, field, BandConfig::default())
}

pub fn entropy_production_rate_banded(
    spec: &ProcessSpec,
    kernel: &JumpKernel,
    field: &DensityField,
    band: BandConfig,
) -> Result<EprResult> {
    let disc = Discretization::new(spec, kernel, &field.grid, band)?;
    let ev = ThermoEvaluator::new(&disc, None)?;
    ev.epr(field)
}

/// Per-snapshot values along a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThermoSeries {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub internal_energy: Vec<f64>,
    pub work_rate: Vec<f64>,
    pub heat_dissipation: Vec<f64>,
    pub epr_local: Vec<f64>,
    pub epr_nonlocal: Vec<f64>,
    pub epr_total: Vec<f64>,
    pub free_energy: Vec<f64>,
    pub entropy_rate: Vec<f64>,
    pub balance_residual: Vec<f64>,
    pub skipped_mass: Vec<f64>,
}

impl ThermoSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Finite-difference `dF/dt` (central inside, second-order one-sided at
    /// the ends).
    pub fn free_energy_rate(&self) -> Vec<f64> {
        finite_difference(&self.times, &self.free_energy)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t,entropy,internal_energy,work_rate,heat_dissipation,epr_local,epr_nonlocal,epr_total,free_energy,entropy_rate,balance_residual"
        )?;
        for i in 0..self.len() {
            let row = [
                self.times[i],
                self.entropy[i],
                self.internal_energy[i],
                self.work_rate[i],
                self.heat_dissipation[i],
                self.epr_local[i],
                self.epr_nonlocal[i],
                self.epr_total[i],
                self.free_energy[i],
                self.entropy_rate[i],
                self.balance_residual[i],
            ];
            let cells: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Values of all functionals at one density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoState {
    pub entropy: f64,
    pub internal_energy: f64,
    pub work_rate: f64,
    pub heat_local: f64,
    pub heat_nonlocal: f64,
    pub epr: EprResult,
}

impl ThermoState {
    pub fn heat_dissipation(&self) -> f64 {
        self.heat_local + self.heat_nonlocal
    }
}

/// Face- and pair-based evaluator bound to a discretization.
pub struct ThermoEvaluator<'a> {
    disc: &'a Discretization,
    decomposition: Option<&'a ForceDecomposition>,
    /// `V` at the nodes.
    potential: Vec<f64>,
    /// `f^loc` normal component at every face, per axis.
    face_force: Vec<Vec<f64>>,
    /// `log k(x_i, x_j)`, `-∞` where the kernel vanishes.
    log_k: Option<Vec<f64>>,
    /// `f^nl(x_i, x_j)` where a driving function is attached.
    driving: Option<Vec<f64>>,
}

impl<'a> ThermoEvaluator<'a> {
    pub fn new(disc: &'a Discretization, decomposition: Option<&'a ForceDecomposition>) -> Result<Self> {
        let grid = &disc.grid;
        let d = grid.dim();
        let n = grid.len();
        let pts = grid.points();
        let potential = match decomposition {
            Some(dec) => (0..n).map(|i| dec.potential(&pts[i * d..(i + 1) * d])).collect(),
            None => vec![0.0; n],
        };
        let mut face_force = Vec::with_capacity(d);
        let mut f = vec![0.0; d];
        let mut p = vec![0.0; d];
        for fs in disc.faces() {
            let mut v = Vec::with_capacity(fs.len());
            for e in 0..fs.len() {
                if let Some(dec) = decomposition {
                    grid.point_into(fs.left[e], &mut p);
                    p[fs.axis] += 0.5 * fs.h;
                    dec.local(&p, &mut f);
                    v.push(f[fs.axis]);
                } else {
                    v.push(0.0);
                }
            }
            face_force.push(v);
        }
        let log_k = disc.kernel_matrix().map(|k| k.par_iter().map(|v| v.ln()).collect::<Vec<f64>>());
        let driving = match (decomposition, disc.has_jumps()) {
            (Some(dec), true) if dec.nonlocal_driving.is_some() => {
                let rows: Vec<Vec<f64>> = (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let x = &pts[i * d..(i + 1) * d];
                        (0..n).map(|j| dec.nonlocal(x, &pts[j * d..(j + 1) * d])).collect()
                    })
                    .collect();
                Some(rows.concat())
            }
            _ => None,
        };
        Ok(Self {
            disc,
            decomposition,
            potential,
            face_force,
            log_k,
            driving,
        })
    }

    pub fn decomposition(&self) -> Option<&ForceDecomposition> {
        self.decomposition
    }

    /// Entropy production rate only.
    pub fn epr(&self, field: &DensityField) -> Result<EprResult> {
        Ok(self.state(field)?.epr)
    }

    /// All functionals at `field`.
    pub fn state(&self, field: &DensityField) -> Result<ThermoState> {
        let disc = self.disc;
        let beta = disc.beta;
        let rho = &field.values;
        let floor = field.default_floor();

        let mut e_loc = 0.0;
        let mut h_loc = 0.0;
        let mut w_loc = 0.0;
        if !disc.diffusion_is_zero() {
            let fluxes = disc.face_fluxes(rho, crate::fokker_planck::FluxScheme::Auto);
            if disc.diffusion_is_diagonal() {
                for ((fs, fl), force) in disc.faces().iter().zip(&fluxes).zip(&self.face_force) {
                    for e in 0..fs.len() {
                        let vol = fs.volume(e);
                        let f = fl[e];
                        w_loc += vol * force[e] * f;
                        if fs.a[e] <= 0.0 {
                            continue;
                        }
                        h_loc -= beta * vol * fs.b[e] * f / fs.a[e];
                        let rl = crate::quadrature::log_mean(rho[fs.left[e]], rho[fs.right[e]]);
                        if rl > 0.0 {
                            e_loc += beta * vol * f * f / (fs.a[e] * rl);
                        }
                    }
                }
            } else {
                let (e, h) = self.nodal_local_terms(field, floor);
                e_loc = e;
                h_loc = h;
                for ((fs, fl), force) in disc.faces().iter().zip(&fluxes).zip(&self.face_force) {
                    for e in 0..fs.len() {
                        w_loc += fs.volume(e) * force[e] * fl[e];
                    }
                }
            }
        } else {
            // pure transport: j^loc = bρ, no dissipation
            let d = disc.grid.dim();
            let b = disc.nodal_drift();
            if let Some(dec) = self.decomposition {
                let mut f = vec![0.0; d];
                let mut p = vec![0.0; d];
                let v: Vec<f64> = (0..disc.len())
                    .map(|i| {
                        disc.grid.point_into(i, &mut p);
                        dec.local(&p, &mut f);
                        (0..d).map(|k| f[k] * b[i * d + k] * rho[i]).sum()
                    })
                    .collect();
                w_loc = disc.grid.integrate(&v);
            }
        }

        let (mut e_nl, mut h_nl, mut w_nl) = (0.0, 0.0, 0.0);
        let (mut skipped, mut skipped_mass, mut total_mass) = (0usize, 0.0, 0.0);
        if let (Some(k), Some(lk)) = (disc.kernel_matrix(), &self.log_k) {
            let n = disc.len();
            let tau = disc.node_weights();
            let rule = &disc.rule;
            let lr: Vec<f64> = rho.iter().map(|v| v.ln()).collect();
            let rows: Vec<Result<[f64; 6]>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut acc = [0.0; 6];
                    for j in 0..n {
                        let w = rule.weight(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        let (kij, kji) = (k[i * n + j], k[j * n + i]);
                        let (fwd, bwd) = (rho[i] * kij, rho[j] * kji);
                        acc[5] += w * (fwd + bwd);
                        if rho[i] < floor || rho[j] < floor {
                            acc[3] += 1.0;
                            acc[4] += w * (fwd + bwd);
                            continue;
                        }
                        if kij == 0.0 && kji == 0.0 {
                            continue;
                        }
                        if kij == 0.0 || kji == 0.0 {
                            return Err(Error::KernelPositivity {
                                x: disc.grid.point(i),
                                y: disc.grid.point(j),
                            });
                        }
                        let jn = fwd - bwd;
                        let lkr = lk[i * n + j] - lk[j * n + i];
                        let term = jn * (lr[i] - lr[j] + lkr);
                        acc[0] += w * term.max(0.0);
                        acc[1] += w * jn * lkr;
                        if let Some(dr) = &self.driving {
                            acc[2] += w * jn * dr[i * n + j];
                        }
                    }
                    for a in acc.iter_mut() {
                        *a *= tau[i];
                    }
                    acc[3] /= tau[i];
                    Ok(acc)
                })
                .collect();
            for r in rows {
                let a = r?;
                e_nl += a[0];
                h_nl += a[1];
                w_nl += a[2];
                skipped += a[3] as usize;
                skipped_mass += a[4];
                total_mass += a[5];
            }
            e_nl *= 0.5;
            h_nl *= -0.5;
            w_nl *= 0.5;
        }
        let skipped_mass = if total_mass > 0.0 { skipped_mass / total_mass } else { 0.0 };

        let entropy = gibbs_entropy(field);
        let vr: Vec<f64> = self.potential.iter().zip(rho).map(|(v, r)| v * r).collect();
        Ok(ThermoState {
            entropy,
            internal_energy: disc.grid.integrate(&vr),
            work_rate: w_loc + w_nl,
            heat_local: h_loc,
            heat_nonlocal: h_nl,
            epr: EprResult {
                local: e_loc,
                nonlocal: e_nl,
                total: e_loc + e_nl,
                skipped_pairs: skipped,
                skipped_mass,
                coverage_warning: skipped_mass > COVERAGE_LIMIT,
                floor,
            },
        })
    }

    /// Local EPR and heat from nodal `∇log ρ`, used when `A` has cross terms.
    fn nodal_local_terms(&self, field: &DensityField, floor: f64) -> (f64, f64) {
        let disc = self.disc;
        let d = disc.grid.dim();
        let beta = disc.beta;
        let g = crate::density::log_density_gradient(field, Some(floor));
        let b = disc.nodal_drift();
        let a = disc.nodal_diffusion();
        let j = disc.nodal_local_current(&field.values);
        let n = disc.len();
        let mut ev = vec![0.0; n];
        let mut hv = vec![0.0; n];
        for i in 0..n {
            let ai = &a[i * d * d..(i + 1) * d * d];
            let ainv_b = match solve_small(ai, &b[i * d..(i + 1) * d]) {
                Some(v) => v,
                None => continue,
            };
            hv[i] = (0..d).map(|k| ainv_b[k] * j[i * d + k]).sum();
            if field.values[i] < floor {
                continue;
            }
            let v: Vec<f64> = (0..d).map(|k| ainv_b[k] - g.components[k][i] / beta).collect();
            let mut q = 0.0;
            for k in 0..d {
                for l in 0..d {
                    q += v[k] * ai[k * d + l] * v[l];
                }
            }
            ev[i] = q * field.values[i];
        }
        (beta * disc.grid.integrate(&ev), -beta * disc.grid.integrate(&hv))
    }
}

/// `dS/dt` by finite differences of the Gibbs entropy.
pub fn entropy_rate(snapshots: &[DensityField]) -> Result<Vec<f64>> {
    if snapshots.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "entropy rate needs at least 3 snapshots, got {}",
            snapshots.len()
        )));
    }
    let t: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let stride = t[1] - t[0];
    if t.windows(2).any(|w| ((w[1] - w[0]) - stride).abs() > 1e-9 * stride.abs().max(1e-300)) || stride <= 0.0 {
        return Err(Error::InvalidArgument("snapshots must have a uniform positive time stride".into()));
    }
    let s: Vec<f64> = snapshots.iter().map(gibbs_entropy).collect();
    Ok(finite_difference(&t, &s))
}

/// Central differences inside, second-order one-sided at the ends.
pub fn finite_difference(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return vec![f64::NAN; n];
    }
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1]);
    }
    let h0 = t[1] - t[0];
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h0);
    let h1 = t[n - 1] - t[n - 2];
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h1);
    out
}

/// Free energy `U - θS`, optionally with `θ KL(ρ‖ρ_ss)` for a Gibbs
/// stationary density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergy {
    pub value: f64,
    pub relative_entropy: Option<f64>,
    /// `value - θ KL`, constant in time (`-θ log Z` for `ρ_ss = e^{-βV}/Z`).
    pub offset: Option<f64>,
}

pub fn free_energy(
    field: &DensityField,
    decomposition: &ForceDecomposition,
    theta: f64,
    gibbs: Option<&DensityField>,
) -> Result<FreeEnergy> {
    let value = internal_energy(field, decomposition) - theta * gibbs_entropy(field);
    let kl = match gibbs {
        None => None,
        Some(ss) => {
            if ss.grid != field.grid {
                return Err(Error::InvalidArgument("stationary density must share the grid".into()));
            }
            let v: Vec<f64> = field
                .values
                .iter()
                .zip(&ss.values)
                .map(|(&p, &q)| if p > 0.0 && q > 0.0 { p * (p / q).ln() } else { 0.0 })
                .collect();
            Some(theta * field.grid.integrate(&v))
        }
    };
    Ok(FreeEnergy {
        value,
        relative_entropy: kl,
        offset: kl.map(|k| value - k),
    })
}

/// Functionals along every snapshot of a run.
pub fn thermo_series(disc: &Discretization, decomposition: &ForceDecomposition, run: &FpeRun) -> Result<ThermoSeries> {
    series_from_snapshots(disc, decomposition, &run.snapshots)
}

pub fn series_from_snapshots(
    disc: &Discretization,
    decomposition: &ForceDecomposition,
    snapshots: &[DensityField],
) -> Result<ThermoSeries> {
    let ev = ThermoEvaluator::new(disc, Some(decomposition))?;
    let theta = 1.0 / disc.beta;
    let mut s = ThermoSeries::default();
    for snap in snapshots {
        let st = ev.state(snap)?;
        s.times.push(snap.time);
        s.entropy.push(st.entropy);
        s.internal_energy.push(st.internal_energy);
        s.work_rate.push(st.work_rate);
        s.heat_dissipation.push(st.heat_dissipation());
        s.epr_local.push(st.epr.local);
        s.epr_nonlocal.push(st.epr.nonlocal);
        s.epr_total.push(st.epr.total);
        s.free_energy.push(st.internal_energy - theta * st.entropy);
        s.skipped_mass.push(st.epr.skipped_mass);
    }
    s.entropy_rate = if snapshots.len() >= 3 {
        finite_difference(&s.times, &s.entropy)
    } else {
        vec![f64::NAN; snapshots.len()]
    };
    s.balance_residual = (0..s.len())
        .map(|i| (s.entropy_rate[i] - (s.epr_total[i] + s.heat_dissipation[i])).abs())
        .collect();
    Ok(s)
}
