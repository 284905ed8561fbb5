//! Density-based reversibility diagnostics: detailed balance of both
//! currents, symmetry of the generator in `L²(μ)`, gradient structure of
//! drift and kernel, and the stationary entropy production rate. For a
//! reversible process all four vanish together; the report checks that
//! their verdicts agree.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fokker_planck::{stationary_residual_with, Discretization, FluxScheme};
use crate::grid::DensityField;
use crate::model::{JumpKernel, ProcessSpec, ScalarFn};
use crate::quadrature::{log_mean, BandConfig};
use crate::simulate::PathEnsemble;
use crate::thermo::ThermoEvaluator;

/// Pass bands for each check; a residual passes when it is at most its
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Precheck on `‖𝓛*ρ‖₁`; above it the density is rejected as non-stationary.
    pub stationarity: f64,
    pub detailed_balance: f64,
    pub generator_asymmetry: f64,
    pub gradient_structure: f64,
    pub epr: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            stationarity: 1e-2,
            detailed_balance: 1e-3,
            generator_asymmetry: 1e-2,
            gradient_structure: 1e-3,
            epr: 1e-4,
        }
    }
}

impl Thresholds {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            stationarity: self.stationarity,
            detailed_balance: self.detailed_balance * factor,
            generator_asymmetry: self.generator_asymmetry * factor,
            gradient_structure: self.gradient_structure * factor,
            epr: self.epr * factor,
        }
    }
}

/// Normalized detailed-balance residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetailedBalance {
    /// `Σ|F| / Σ(|b ρ| + |β⁻¹A ∂ρ|)` over faces.
    pub local: f64,
    /// `∬|j^nl| / ∬(ρk + ρ'k')`.
    pub nonlocal: f64,
}

/// Currents of `rho_ss` relative to their gross flows.
pub fn check_detailed_balance(disc: &Discretization, rho_ss: &DensityField, max_stationary: f64) -> Result<DetailedBalance> {
    let stat = stationary_residual_with(disc, rho_ss, FluxScheme::LogMean);
    if !(stat <= max_stationary) {
        return Err(Error::NonStationary {
            residual: stat,
            threshold: max_stationary,
        });
    }
    Ok(detailed_balance_residuals(disc, rho_ss))
}

fn detailed_balance_residuals(disc: &Discretization, rho_ss: &DensityField) -> DetailedBalance {
    let rho = &rho_ss.values;
    let theta = 1.0 / disc.beta;
    let fluxes = disc.face_fluxes(rho, FluxScheme::LogMean);
    let (mut num, mut den) = (0.0, 0.0);
    for (fs, fl) in disc.faces().iter().zip(&fluxes) {
        for e in 0..fs.len() {
            let (l, r) = (rho[fs.left[e]], rho[fs.right[e]]);
            let vol = fs.volume(e);
            num += vol * fl[e].abs();
            den += vol * ((fs.b[e] * log_mean(l, r)).abs() + (theta * fs.a[e] * (r - l) / fs.h).abs());
        }
    }
    let local = if den > 0.0 { num / den } else { 0.0 };

    let mut nonlocal = 0.0;
    if let Some(k) = disc.kernel_matrix() {
        let n = disc.len();
        let tau = disc.node_weights();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let (mut a, mut b) = (0.0, 0.0);
            for j in 0..n {
                let w = disc.rule.weight(i, j);
                if w == 0.0 {
                    continue;
                }
                let (f, g) = (rho[i] * k[i * n + j], rho[j] * k[j * n + i]);
                a += w * (f - g).abs();
                b += w * (f + g);
            }
            num += tau[i] * a;
            den += tau[i] * b;
        }
        if den > 0.0 {
            nonlocal = num / den;
        }
    }
    DetailedBalance { local, nonlocal }
}

/// A named test function.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    pub f: ScalarFn,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label)
    }
}

impl TestFunction {
    pub fn new(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            f: std::sync::Arc::new(f),
        }
    }
}

/// Gaussian bumps at several centers plus an odd function.
pub fn default_battery(dim: usize) -> Vec<TestFunction> {
    let mut out = Vec::new();
    if dim == 1 {
        for c in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            out.push(TestFunction::new(format!("bump({c})"), move |x: &[f64]| {
                (-(x[0] - c) * (x[0] - c) / 2.0).exp()
            }));
        }
        out.push(TestFunction::new("odd", |x: &[f64]| x[0] * (-x[0] * x[0] / 4.0).exp()));
    } else {
        for c in [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]] {
            out.push(TestFunction::new(format!("bump({},{})", c[0], c[1]), move |x: &[f64]| {
                let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                (-r2 / 2.0).exp()
            }));
        }
        out.push(TestFunction::new("odd", |x: &[f64]| {
            x[0] * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp()
        }));
    }
    out
}

/// Matrix of normalized `⟨𝓛f,g⟩_μ - ⟨𝓛g,f⟩_μ` over the battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryMatrix {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl AsymmetryMatrix {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn generator_asymmetry_matrix(disc: &Discretization, rho_ss: &DensityField, battery: &[TestFunction]) -> AsymmetryMatrix {
    let grid = &disc.grid;
    let n = grid.len();
    let d = grid.dim();
    let pts = grid.points();
    let mu: Vec<f64> = grid.weights().iter().zip(&rho_ss.values).map(|(t, r)| t * r).collect();
    let fs: Vec<Vec<f64>> = battery
        .iter()
        .map(|t| (0..n).map(|i| (t.f)(&pts[i * d..(i + 1) * d])).collect())
        .collect();
    let lfs: Vec<Vec<f64>> = fs
        .iter()
        .map(|f| {
            let mut out = vec![0.0; n];
            disc.generator(f, &mut out);
            out
        })
        .collect();
    let inner = |a: &[f64], b: &[f64]| -> f64 { mu.iter().zip(a).zip(b).map(|((m, x), y)| m * x * y).sum() };
    let norms: Vec<f64> = fs.iter().map(|f| inner(f, f).sqrt()).collect();
    let m = battery.len();
    let mut values = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            if a == b {
                continue;
            }
            let v = inner(&lfs[a], &fs[b]) - inner(&lfs[b], &fs[a]);
            values[a * m + b] = v / (norms[a] * norms[b]);
        }
    }
    AsymmetryMatrix {
        labels: battery.iter().map(|t| t.label.clone()).collect(),
        values,
    }
}

/// Max over ordered pairs of the normalized asymmetry.
pub fn generator_asymmetry(disc: &Discretization, rho_ss: &DensityField, battery: &[TestFunction]) -> f64 {
    generator_asymmetry_matrix(disc, rho_ss, battery).max_abs()
}

/// Residuals of `b = -A∇V` and of the symmetry of
/// `s(x,y) = k(x,y) e^{β(V(y)-V(x))/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientStructure {
    /// `max|b + A∇V| / max|b|` over probes (0 when `b ≡ 0`).
    pub drift: f64,
    /// `max |s(x,y) - s(y,x)| / max(s(x,y), s(y,x))` over probe pairs.
    pub kernel: f64,
}

impl GradientStructure {
    pub fn residual(&self) -> f64 {
        self.drift.max(self.kernel)
    }
}

pub fn check_gradient_structure(
    spec: &ProcessSpec,
    kernel: &JumpKernel,
    potential: &dyn Fn(&[f64]) -> f64,
    probes: &[Vec<f64>],
) -> GradientStructure {
    let d = spec.dim;
    let beta = spec.beta;
    let h = 1e-5;
    let (mut worst, mut scale) = (0.0f64, 0.0f64);
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    for p in probes {
        spec.drift.eval(p, &mut b);
        spec.diffusion.matrix(p, &mut a);
        let mut grad = vec![0.0; d];
        let mut q = p.clone();
        for k in 0..d {
            q[k] = p[k] + h;
            let vp = potential(&q);
            q[k] = p[k] - h;
            let vm = potential(&q);
            q[k] = p[k];
            grad[k] = (vp - vm) / (2.0 * h);
        }
        let mut r2 = 0.0;
        let mut b2 = 0.0;
        for k in 0..d {
            let ag: f64 = (0..d).map(|l| a[k * d + l] * grad[l]).sum();
            r2 += (b[k] + ag).powi(2);
            b2 += b[k] * b[k];
        }
        worst = worst.max(r2.sqrt());
        scale = scale.max(b2.sqrt());
    }
    let drift = if scale > 0.0 { worst / scale } else { 0.0 };

    let mut kres = 0.0f64;
    if !kernel.is_zero() {
        let vs: Vec<f64> = probes.iter().map(|p| potential(p)).collect();
        for i in 0..probes.len() {
            for j in (i + 1)..probes.len() {
                let (x, y) = (&probes[i], &probes[j]);
                let half = 0.5 * beta * (vs[j] - vs[i]);
                let sxy = kernel.rate(x, y) * half.exp();
                let syx = kernel.rate(y, x) * (-half).exp();
                let m = sxy.max(syx);
                if m > 0.0 && m.is_finite() {
                    kres = kres.max((sxy - syx).abs() / m);
                }
            }
        }
    }
    GradientStructure { drift, kernel: kres }
}

/// Grid nodes carrying the bulk of the mass, thinned to at most `max`.
pub fn bulk_probes(rho_ss: &DensityField, max: usize) -> Vec<Vec<f64>> {
    let cut = 1e-3 * rho_ss.max();
    let idx: Vec<usize> = (0..rho_ss.grid.len()).filter(|&i| rho_ss.values[i] >= cut).collect();
    let stride = idx.len().div_ceil(max.max(1)).max(1);
    idx.iter().step_by(stride).map(|&i| rho_ss.grid.point(i)).collect()
}

/// Monte-Carlo comparison of `E[f(X_t) g(X_0)]` and `E[f(X_0) g(X_t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCorrelation {
    pub forward_corr: f64,
    pub backward_corr: f64,
    pub standard_error: f64,
    pub z_score: f64,
}

/// Uses every window `[s, s + lag]` with `s` a multiple of `lag`; paths are
/// the independent units for the standard error.
pub fn mc_reversibility_test(
    ensemble: &PathEnsemble,
    f: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(&[f64]) -> f64,
    lag: f64,
) -> Result<McCorrelation> {
    let steps = (lag / ensemble.dt).round() as usize;
    if steps == 0 || ((steps as f64) * ensemble.dt - lag).abs() > 1e-9 * lag {
        return Err(Error::InvalidArgument(format!("lag {lag} is not a positive multiple of dt")));
    }
    if lag > ensemble.t_final + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "lag {lag} exceeds the path horizon {}",
            ensemble.t_final
        )));
    }
    let n = ensemble.paths.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least two paths".into()));
    }
    let mut fw = Vec::with_capacity(n);
    let mut bw = Vec::with_capacity(n);
    for p in &ensemble.paths {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0usize);
        let mut s = 0;
        while s + steps < p.len() {
            let (x0, xt) = (p.state(s), p.state(s + steps));
            a += f(xt) * g(x0);
            b += f(x0) * g(xt);
            c += 1;
            s += steps;
        }
        fw.push(a / c as f64);
        bw.push(b / c as f64);
    }
    let nf = n as f64;
    let mf = fw.iter().sum::<f64>() / nf;
    let mb = bw.iter().sum::<f64>() / nf;
    let diffs: Vec<f64> = fw.iter().zip(&bw).map(|(a, b)| a - b).collect();
    let md = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let z = if se > 0.0 { md / se } else { 0.0 };
    Ok(McCorrelation {
        forward_corr: mf,
        backward_corr: mb,
        standard_error: se,
        z_score: z,
    })
}

/// Per-pair results and a Bonferroni-corrected any-pair rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McBattery {
    pub pairs: Vec<(String, McCorrelation)>,
    pub critical_z: f64,
    pub rejected: bool,
}

/// Six default `(f, g)` pairs at family-wise level `level`.
pub fn mc_battery(ensemble: &PathEnsemble, lag: f64, level: f64) -> Result<McBattery> {
    type F = fn(&[f64]) -> f64;
    let pairs: [(&str, F, F); 6] = [
        ("x,x^3", |x| x[0], |x| x[0].powi(3)),
        ("1{x>0},x1{x<1}", |x| (x[0] > 0.0) as u8 as f64, |x| if x[0] < 1.0 { x[0] } else { 0.0 }),
        ("x,1{x>0}", |x| x[0], |x| (x[0] > 0.0) as u8 as f64),
        ("atan x,x^2", |x| x[0].atan(), |x| x[0] * x[0]),
        ("x,sin x", |x| x[0], |x| x[0].sin()),
        ("x,y", |x| x[0], |x| *x.last().unwrap()),
    ];
    let m = pairs.len() as f64;
    let critical_z = Normal::new(0.0, 1.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(1.0 - level / (2.0 * m));
    let mut out = Vec::new();
    let mut rejected = false;
    for (label, f, g) in pairs {
        let r = mc_reversibility_test(ensemble, &f, &g, lag)?;
        rejected |= r.z_score.abs() > critical_z;
        out.push((label.to_string(), r));
    }
    Ok(McBattery {
        pairs: out,
        critical_z,
        rejected,
    })
}

/// Joint outcome of the four checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityReport {
    pub label: String,
    pub stationary_residual: f64,
    pub db_local_residual: f64,
    pub db_nonlocal_residual: f64,
    pub generator_asymmetry: f64,
    pub gradient_drift_residual: f64,
    pub gradient_kernel_residual: f64,
    pub epr_ss: f64,
    pub epr_local: f64,
    pub epr_nonlocal: f64,
    pub thresholds: Thresholds,
    pub detailed_balance_pass: bool,
    pub generator_symmetry_pass: bool,
    pub gradient_structure_pass: bool,
    pub epr_pass: bool,
    pub verdict_consistent: bool,
    /// `Some(reversible)` when the four checks agree.
    pub reversible: Option<bool>,
    /// Smallest `max(r/t, t/r)` over the four checks.
    pub separation: f64,
    pub notes: Vec<String>,
    pub mc: Option<McBattery>,
}

impl ReversibilityReport {
    pub fn detailed_balance_residual(&self) -> f64 {
        self.db_local_residual.max(self.db_nonlocal_residual)
    }

    pub fn gradient_structure_residual(&self) -> f64 {
        self.gradient_drift_residual.max(self.gradient_kernel_residual)
    }

    /// The four `(residual, threshold)` pairs.
    pub fn checks(&self) -> [(f64, f64); 4] {
        [
            (self.detailed_balance_residual(), self.thresholds.detailed_balance),
            (self.generator_asymmetry, self.thresholds.generator_asymmetry),
            (self.gradient_structure_residual(), self.thresholds.gradient_structure),
            (self.epr_ss, self.thresholds.epr),
        ]
    }

    /// Re-evaluate pass flags and the verdict under other thresholds.
    pub fn with_thresholds(&self, thresholds: Thresholds) -> Self {
        let mut r = self.clone();
        r.thresholds = thresholds;
        r.finish();
        r
    }

    fn finish(&mut self) {
        let c = self.checks();
        let pass: Vec<bool> = c.iter().map(|(r, t)| r <= t).collect();
        self.detailed_balance_pass = pass[0];
        self.generator_symmetry_pass = pass[1];
        self.gradient_structure_pass = pass[2];
        self.epr_pass = pass[3];
        self.verdict_consistent = pass.iter().all(|p| *p == pass[0]);
        self.reversible = self.verdict_consistent.then_some(pass[0]);
        self.separation = c
            .iter()
            .map(|(r, t)| {
                let r = r.max(1e-300);
                (r / t).max(t / r)
            })
            .fold(f64::INFINITY, f64::min);
    }

    pub fn attach_mc(&mut self, mc: McBattery) {
        self.mc = Some(mc);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// All checks at `rho_ss` with the default band.
pub fn full_report(spec: &ProcessSpec, kernel: &JumpKernel, rho_ss: &DensityField, thresholds: &Thresholds) -> Result<ReversibilityReport> {
    full_report_banded(spec, kernel, rho_ss, thresholds, BandConfig::default())
}

pub fn full_report_banded(
    spec: &ProcessSpec,
    kernel: &JumpKernel,
    rho_ss: &DensityField,
    thresholds: &Thresholds,
    band: BandConfig,
) -> Result<ReversibilityReport> {
    let disc = Discretization::new(spec, kernel, &rho_ss.grid, band)?;
    let stat = stationary_residual_with(&disc, rho_ss, FluxScheme::LogMean);
    if !(stat <= thresholds.stationarity) {
        return Err(Error::NonStationary {
            residual: stat,
            threshold: thresholds.stationarity,
        });
    }
    let db = detailed_balance_residuals(&disc, rho_ss);
    let asym = generator_asymmetry(&disc, rho_ss, &default_battery(spec.dim));

    let floor = rho_ss.default_floor();
    let log_rho = rho_ss.log_values(floor);
    let grid = rho_ss.grid.clone();
    let theta = spec.theta();
    let potential = move |x: &[f64]| -theta * grid.interpolate(&log_rho, x, None);
    let probes = bulk_probes(rho_ss, if spec.dim == 1 { 200 } else { 150 });
    let gs = check_gradient_structure(spec, kernel, &potential, &probes);

    let ev = ThermoEvaluator::new(&disc, None)?;
    let epr = ev.epr(rho_ss)?;
    let mut notes = vec!["potential taken as V = -log(rho_ss)/beta".to_string()];
    if epr.coverage_warning {
        notes.push(format!("EPR skipped-pair mass fraction {:.3e}", epr.skipped_mass));
    }
    let mut r = ReversibilityReport {
        label: spec.label.clone(),
        stationary_residual: stat,
        db_local_residual: db.local,
        db_nonlocal_residual: db.nonlocal,
        generator_asymmetry: asym,
        gradient_drift_residual: gs.drift,
        gradient_kernel_residual: gs.kernel,
        epr_ss: epr.total,
        epr_local: epr.local,
        epr_nonlocal: epr.nonlocal,
        thresholds: *thresholds,
        detailed_balance_pass: false,
        generator_symmetry_pass: false,
        gradient_structure_pass: false,
        epr_pass: false,
        verdict_consistent: false,
        reversible: None,
        separation: 0.0,
        notes,
        mc: None,
    };
    r.finish();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{build_jump_kernel, Diffusion, Drift, JumpMap, LevyDensity};
    use crate::simulate::{simulate_ensemble, Initial};

    fn gibbs(grid: Grid) -> DensityField {
        let v = grid.axis(0).nodes().iter().map(|x| (-0.5 * x * x).exp()).collect();
        DensityField::normalized(grid, v, 0.0).unwrap()
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

    #[test]
    fn uniform_free_density_has_zero_currents() {
        let g = Grid::new_1d(0.0, 1.0, 21).unwrap();
        let u = DensityField::normalized(g.clone(), vec![1.0; 21], 0.0).unwrap();
        let spec = ProcessSpec::new("free", 1);
        let disc = Discretization::new(&spec, &JumpKernel::zero(), &g, BandConfig::default()).unwrap();
        let db = check_detailed_balance(&disc, &u, 1e-2).unwrap();
        assert_eq!(db.local, 0.0);
        assert_eq!(db.nonlocal, 0.0);
    }

    #[test]
    fn example_one_gradient_structure() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let probes: Vec<Vec<f64>> = (-20..=20).map(|i| vec![i as f64 * 0.2]).collect();
        let gs = check_gradient_structure(&spec, &k, &|x: &[f64]| 0.5 * x[0] * x[0], &probes);
        assert!(gs.drift < 1e-8 && gs.kernel < 1e-8, "{gs:?}");
        let sym = build_jump_kernel(&ProcessSpec::new("s", 1).with_jumps(1.0, LevyDensity::stable(1, 1.5), JumpMap::Identity)).unwrap();
        let gs = check_gradient_structure(&ProcessSpec::new("s", 1), &sym, &|_: &[f64]| 0.0, &probes);
        assert_eq!(gs.kernel, 0.0);
    }

    #[test]
    fn asymmetry_matrix_is_antisymmetric() {
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let rho = gibbs(Grid::new_1d(-8.0, 8.0, 321).unwrap());
        let disc = Discretization::new(&spec, &k, &rho.grid, BandConfig::default()).unwrap();
        let m = generator_asymmetry_matrix(&disc, &rho, &default_battery(1));
        let n = m.labels.len();
        for a in 0..n {
            assert_eq!(m.values[a * n + a], 0.0);
            for b in 0..n {
                assert_eq!(m.values[a * n + b], -m.values[b * n + a]);
            }
        }
    }

    #[test]
    fn mutated_drift_is_refused() {
        let spec = ex1();
        let mutated = spec.clone().with_drift(spec.drift.scaled(1.1));
        let k = build_jump_kernel(&spec).unwrap();
        let rho = gibbs(Grid::new_1d(-8.0, 8.0, 641).unwrap());
        assert!(full_report(&spec, &k, &rho, &Thresholds::default()).is_ok());
        assert!(matches!(
            full_report(&mutated, &k, &rho, &Thresholds::default()),
            Err(Error::NonStationary { .. })
        ));
    }

    #[test]
    fn mc_test_identities_and_errors() {
        let spec = ex1();
        let rho = gibbs(Grid::new_1d(-8.0, 8.0, 321).unwrap());
        let e = simulate_ensemble(&spec, &Initial::Density(rho.sampler().unwrap()), 4.0, 0.01, 200, 3).unwrap();
        let f = |x: &[f64]| x[0];
        let r = mc_reversibility_test(&e, &f, &f, 0.5).unwrap();
        assert_eq!(r.z_score, 0.0);
        assert!(mc_reversibility_test(&e, &f, &f, 5.0).is_err());
        assert!(mc_reversibility_test(&e, &f, &f, 0.005).is_err());
        let g = |x: &[f64]| x[0].powi(3);
        let r = mc_reversibility_test(&e, &f, &g, 0.5).unwrap();
        assert!(r.z_score.abs() < 3.0, "{r:?}");
    }
}
