//! Monte-Carlo paths of jump diffusions: Euler–Maruyama on the Itô form
//! with compound-Poisson jumps applied at step boundaries, α-stable drivers
//! via Chambers–Mallows–Stuck increments, and time-reversed dynamics.

use std::io::Write;
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt17, DensityField, GridSampler};
use crate::model::{stable_constant, JumpDriver, JumpKernel, LevyDensity, ProcessSpec};

/// Largest expected number of compound-Poisson jumps per step.
pub const MAX_JUMPS_PER_STEP: f64 = 0.1;

/// `splitmix64` finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` in an ensemble with `master` seed.
pub fn path_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A recorded jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Index of the step the jump belongs to (`times[step]` → `times[step + 1]`).
    pub step: usize,
    pub time: f64,
    pub pre_state: Vec<f64>,
    pub displacement: Vec<f64>,
}

/// Sample path on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major, `dim` entries per time.
    pub states: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
}

impl Path {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        writeln!(w, "t,{},jump_flag", cols.join(","))?;
        let mut flags = vec![0u8; self.len()];
        for j in &self.jumps {
            flags[j.step + 1] = 1;
        }
        for i in 0..self.len() {
            let xs: Vec<String> = self.state(i).iter().map(|v| fmt17(*v)).collect();
            writeln!(w, "{},{},{}", fmt17(self.times[i]), xs.join(","), flags[i])?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Paths sharing a spec, horizon and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub paths: Vec<Path>,
    pub spec_fingerprint: String,
    pub dt: f64,
    pub t_final: f64,
    pub master_seed: u64,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Terminal states, `dim` entries per path.
    pub fn terminal_states(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.last().to_vec()).collect()
    }

    /// Check that `spec` generated this ensemble.
    pub fn check_fingerprint(&self, spec: &ProcessSpec) -> Result<()> {
        let found = spec.fingerprint();
        if found != self.spec_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.spec_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    /// One `path_{i}.csv` per path plus `manifest.json`; returns file names.
    pub fn export(&self, dir: impl AsRef<FsPath>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (i, p) in self.paths.iter().enumerate() {
            let name = format!("path_{i}.csv");
            p.save_csv(dir.join(&name))?;
            names.push(name);
        }
        let manifest = serde_json::json!({
            "seed": self.master_seed,
            "dt": self.dt,
            "t_final": self.t_final,
            "spec_fingerprint": self.spec_fingerprint,
            "path_seeds": self.paths.iter().map(|p| p.seed).collect::<Vec<_>>(),
            "files": names,
        });
        let mut f = std::fs::File::create(dir.join("manifest.json"))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&manifest)?)?;
        names.push("manifest.json".into());
        Ok(names)
    }
}

/// Initial law of an ensemble.
#[derive(Debug, Clone)]
pub enum Initial {
    Point(Vec<f64>),
    /// Independent normal coordinates.
    Gaussian { mean: Vec<f64>, std: f64 },
    Density(GridSampler),
}

impl Initial {
    pub fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Initial::Point(p) => out.copy_from_slice(p),
            Initial::Gaussian { mean, std } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = m + std * g;
                }
            }
            Initial::Density(s) => s.sample(rng, out),
        }
    }
}

/// Symmetric standard α-stable draw (`E e^{iξS} = e^{-|ξ|^α}`) by the
/// Chambers–Mallows–Stuck transform.
pub fn sample_symmetric_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let v = std::f64::consts::PI * (rng.gen::<f64>() - 0.5);
    let w: f64 = rng.sample(Exp1);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let s = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    s * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Poisson draw by CDF inversion (means here are below 0.1).
fn poisson_small<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0;
    while u > cdf && k < 64 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// Increments produced by one step.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    /// Drift + Brownian increment.
    pub continuous: Vec<f64>,
    /// Jumps as consecutive `(pre, post)` state pairs, flattened.
    pub jumps: Vec<f64>,
}

impl StepRecord {
    pub fn jump_count(&self, dim: usize) -> usize {
        self.jumps.len() / (2 * dim)
    }
}

/// One Euler–Maruyama step of the forward dynamics.
#[derive(Debug, Clone)]
pub struct Stepper {
    spec: ProcessSpec,
    dt: f64,
    noise: f64,
    driver: JumpDriver,
    /// Scale of the stable increment over one step.
    stable_scale: f64,
}

impl Stepper {
    pub fn new(spec: &ProcessSpec, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if spec.kernel_override.is_some() {
            return Err(Error::Unsupported(
                "closed-form kernels carry no jump sampler; describe jumps by a Lévy density and map".into(),
            ));
        }
        let driver = spec.driver();
        let mut stable_scale = 0.0;
        match driver {
            JumpDriver::CompoundPoisson { total_rate } => {
                if total_rate * dt >= MAX_JUMPS_PER_STEP {
                    return Err(Error::InvalidArgument(format!(
                        "expected jumps per step {} must stay below {MAX_JUMPS_PER_STEP}",
                        total_rate * dt
                    )));
                }
            }
            JumpDriver::Stable { alpha } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(Error::InvalidArgument(format!("alpha must lie in (0, 2), got {alpha}")));
                }
                if spec.dim != 1 {
                    return Err(Error::Unsupported("stable drivers are simulated in 1D only".into()));
                }
                let c = match &spec.levy {
                    Some(LevyDensity::Stable { constant, .. }) => *constant,
                    _ => unreachable!(),
                };
                let rel = spec.jump_rate * c / stable_constant(1, alpha);
                stable_scale = (rel * dt).powf(1.0 / alpha);
            }
            JumpDriver::None => {}
        }
        Ok(Self {
            spec: spec.clone(),
            dt,
            noise: (2.0 * spec.theta() * dt).sqrt(),
            driver,
            stable_scale,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    /// Advance `x` by one step, filling `rec`.
    pub fn step<R: Rng>(&self, rng: &mut R, x: &mut [f64], rec: &mut StepRecord) -> Result<()> {
        let d = self.spec.dim;
        rec.continuous.resize(d, 0.0);
        rec.jumps.clear();
        let mut b = [0.0; 2];
        let mut a = [0.0; 4];
        self.spec.ito_drift(x, &mut b[..d]);
        for k in 0..d {
            rec.continuous[k] = b[k] * self.dt;
        }
        if !self.spec.diffusion.is_zero() {
            self.spec.diffusion.factor(x, &mut a[..d * d]);
            let mut xi = [0.0; 2];
            for v in xi.iter_mut().take(d) {
                *v = rng.sample(StandardNormal);
            }
            for k in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += a[k * d + l] * xi[l];
                }
                rec.continuous[k] += self.noise * s;
            }
        }
        let mut pre = [0.0; 2];
        pre[..d].copy_from_slice(x);
        match self.driver {
            JumpDriver::None => {
                for k in 0..d {
                    x[k] += rec.continuous[k];
                }
            }
            JumpDriver::CompoundPoisson { total_rate } => {
                for k in 0..d {
                    x[k] += rec.continuous[k];
                }
                let count = poisson_small(rng, total_rate * self.dt);
                let levy = self.spec.levy.as_ref().expect("driver implies levy");
                let map = self.spec.jump_map.as_ref().expect("driver implies map");
                let mut z = [0.0; 2];
                let mut disp = [0.0; 2];
                let mut from = pre;
                for _ in 0..count {
                    levy.sample(rng, &mut z[..d])?;
                    map.forward(&from[..d], &z[..d], &mut disp[..d]);
                    let mut to = [0.0; 2];
                    for k in 0..d {
                        x[k] += disp[k];
                        to[k] = from[k] + disp[k];
                    }
                    rec.jumps.extend_from_slice(&from[..d]);
                    rec.jumps.extend_from_slice(&to[..d]);
                    from = to;
                }
            }
            JumpDriver::Stable { alpha } => {
                let from = x[0] + rec.continuous[0];
                let dl = self.stable_scale * sample_symmetric_stable(rng, alpha);
                x[0] = from + dl;
                rec.jumps.push(from);
                rec.jumps.push(from + dl);
            }
        }
        Ok(())
    }
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument("t_final and dt must be positive".into()));
    }
    let n = (t_final / dt).round();
    if (n * dt - t_final).abs() > 1e-9 * t_final {
        return Err(Error::InvalidArgument(format!(
            "t_final {t_final} is not a multiple of dt {dt}"
        )));
    }
    Ok(n as usize)
}

fn run_path(
    stepper: &Stepper,
    x0: &[f64],
    t_final: f64,
    seed: u64,
    jump_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Path> {
    let d = x0.len();
    let dt = stepper.dt;
    let steps = step_count(t_final, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut jumps = Vec::new();
    let mut x = x0.to_vec();
    times.push(0.0);
    states.extend_from_slice(&x);
    let mut rec = StepRecord::default();
    for s in 0..steps {
        stepper.step(rng, &mut x, &mut rec)?;
        let t = if s + 1 == steps { t_final } else { (s + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        for pair in rec.jumps.chunks_exact(2 * d) {
            let disp: Vec<f64> = (0..d).map(|k| pair[d + k] - pair[k]).collect();
            if disp.iter().map(|v| v * v).sum::<f64>().sqrt() > jump_threshold {
                jumps.push(JumpEvent {
                    step: s,
                    time: t,
                    pre_state: pair[..d].to_vec(),
                    displacement: disp,
                });
            }
        }
        times.push(t);
        states.extend_from_slice(&x);
    }
    Ok(Path {
        dim: d,
        times,
        states,
        jumps,
        seed,
    })
}

/// Euler–Maruyama path of `spec` from `x0`.
pub fn simulate_path(spec: &ProcessSpec, x0: &[f64], t_final: f64, dt: f64, seed: u64) -> Result<Path> {
    check_start(spec, x0)?;
    let stepper = Stepper::new(spec, dt)?;
    let mut rng = rng_from_seed(seed);
    run_path(&stepper, x0, t_final, seed, 0.0, &mut rng)
}

/// Path of a spec with a 1D symmetric stable driver; increments larger than
/// `jump_threshold` are recorded as jumps.
pub fn simulate_stable_path(
    spec: &ProcessSpec,
    x0: f64,
    t_final: f64,
    dt: f64,
    seed: u64,
    jump_threshold: f64,
) -> Result<Path> {
    match spec.driver() {
        JumpDriver::Stable { .. } => {}
        _ => {
            if let Some(LevyDensity::Stable { alpha, .. }) = &spec.levy {
                return Err(Error::InvalidArgument(format!("alpha must lie in (0, 2), got {alpha}")));
            }
            return Err(Error::InvalidArgument("spec has no stable driver".into()));
        }
    }
    let stepper = Stepper::new(spec, dt)?;
    let mut rng = rng_from_seed(seed);
    run_path(&stepper, &[x0], t_final, seed, jump_threshold, &mut rng)
}

fn check_start(spec: &ProcessSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != spec.dim {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} coordinates, spec has dimension {}",
            x0.len(),
            spec.dim
        )));
    }
    Ok(())
}

/// Full paths for `paths` seeds derived from `master_seed`.
pub fn simulate_ensemble(
    spec: &ProcessSpec,
    initial: &Initial,
    t_final: f64,
    dt: f64,
    paths: usize,
    master_seed: u64,
) -> Result<PathEnsemble> {
    let stepper = Stepper::new(spec, dt)?;
    let d = spec.dim;
    let out: Vec<Result<Path>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(master_seed, i);
            let mut rng = rng_from_seed(seed);
            let mut x0 = vec![0.0; d];
            initial.sample(&mut rng, &mut x0);
            run_path(&stepper, &x0, t_final, seed, 0.0, &mut rng)
        })
        .collect();
    Ok(PathEnsemble {
        paths: out.into_iter().collect::<Result<Vec<_>>>()?,
        spec_fingerprint: spec.fingerprint(),
        dt,
        t_final,
        master_seed,
    })
}

/// Terminal states only (`dim` per path), without storing trajectories.
pub fn terminal_states(
    spec: &ProcessSpec,
    initial: &Initial,
    t_final: f64,
    dt: f64,
    paths: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let stepper = Stepper::new(spec, dt)?;
    let steps = step_count(t_final, dt)?;
    let d = spec.dim;
    let out: Vec<Result<Vec<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(path_seed(master_seed, i));
            let mut x = vec![0.0; d];
            initial.sample(&mut rng, &mut x);
            let mut rec = StepRecord::default();
            for s in 0..steps {
                stepper.step(&mut rng, &mut x, &mut rec)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence {
                        time: (s + 1) as f64 * dt,
                    });
                }
            }
            Ok(x)
        })
        .collect();
    let mut flat = Vec::with_capacity(paths * d);
    for r in out {
        flat.extend(r?);
    }
    Ok(flat)
}

/// Time-reversed coefficients about a stationary density:
/// `b^R = -b + 2β⁻¹A∇log ρ` and `k^R(x,y) = ρ(y)k(y,x)/ρ(x)`.
#[derive(Debug, Clone)]
pub struct ReversedDynamics {
    spec: ProcessSpec,
    kernel: JumpKernel,
    field: DensityField,
    log_rho: Vec<f64>,
    log_floor: f64,
}

impl ReversedDynamics {
    pub fn new(spec: &ProcessSpec, kernel: &JumpKernel, rho_ss: &DensityField) -> Result<Self> {
        if !spec.diffusion.is_constant() {
            return Err(Error::Unsupported(
                "time reversal needs a constant diffusion factor".into(),
            ));
        }
        if rho_ss.grid.dim() != spec.dim {
            return Err(Error::InvalidArgument("density and spec dimensions differ".into()));
        }
        let floor = rho_ss.default_floor();
        Ok(Self {
            spec: spec.clone(),
            kernel: kernel.clone(),
            field: rho_ss.clone(),
            log_rho: rho_ss.log_values(floor),
            log_floor: floor.ln(),
        })
    }

    pub fn field(&self) -> &DensityField {
        &self.field
    }

    /// `log ρ(x)` by cubic interpolation of the nodal logarithm, with its
    /// gradient; fails outside the grid or below the floor.
    pub fn log_density(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        if !self.field.grid.contains(x) {
            return Err(Error::ReversalUndefined { state: x.to_vec() });
        }
        let v = self.field.grid.interpolate(&self.log_rho, x, grad);
        if !(v > self.log_floor) {
            return Err(Error::ReversalUndefined { state: x.to_vec() });
        }
        Ok(v)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x, None)?.exp())
    }

    /// Itô drift of the reversed process (the `∇·A` term vanishes for
    /// constant `a`).
    pub fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.spec.dim;
        let mut g = [0.0; 2];
        self.log_density(x, Some(&mut g[..d]))?;
        let mut a = [0.0; 4];
        self.spec.diffusion.matrix(x, &mut a[..d * d]);
        self.spec.drift.eval(x, out);
        let theta = self.spec.theta();
        for k in 0..d {
            let ag: f64 = (0..d).map(|l| a[k * d + l] * g[l]).sum();
            out[k] = -out[k] + 2.0 * theta * ag;
        }
        Ok(())
    }

    /// `k^R(x, y)`.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let lx = self.log_density(x, None)?;
        let ly = match self.log_density(y, None) {
            Ok(v) => v,
            Err(_) => return Ok(0.0),
        };
        Ok((ly - lx).exp() * self.kernel.evaluate(y, x)?)
    }
}

/// Euler–Maruyama path of the time reversal about `rho_ss`; reversed jumps
/// are drawn per step from `k^R(x, ·)` discretized on the density grid.
pub fn simulate_reversed_path(
    spec: &ProcessSpec,
    kernel: &JumpKernel,
    rho_ss: &DensityField,
    x0: &[f64],
    t_final: f64,
    dt: f64,
    seed: u64,
) -> Result<Path> {
    check_start(spec, x0)?;
    if kernel.singularity_order().is_some() {
        return Err(Error::Unsupported(
            "reversed simulation with a singular kernel".into(),
        ));
    }
    let rev = ReversedDynamics::new(spec, kernel, rho_ss)?;
    let steps = step_count(t_final, dt)?;
    let d = spec.dim;
    let grid = &rho_ss.grid;
    let n = grid.len();
    let pts = grid.points();
    let tau = grid.weights();
    let noise = (2.0 * spec.theta() * dt).sqrt();
    let mut rng = rng_from_seed(seed);
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = x.clone();
    let mut jumps = Vec::new();
    let mut rates = vec![0.0; n];
    let mut b = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let has_jumps = !kernel.is_zero();
    for s in 0..steps {
        let t = if s + 1 == steps { t_final } else { (s + 1) as f64 * dt };
        rev.drift(&x, &mut b)?;
        let pre = x.clone();
        for k in 0..d {
            x[k] += b[k] * dt;
        }
        if !spec.diffusion.is_zero() {
            spec.diffusion.factor(&pre, &mut a);
            let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for k in 0..d {
                x[k] += noise * (0..d).map(|l| a[k * d + l] * xi[l]).sum::<f64>();
            }
        }
        if has_jumps {
            let mut from = pre;
            let mut total = fill_rates(&rev, &from, &pts, &tau, &mut rates)?;
            let mut remaining = dt;
            // sequential thinning: exponential waiting times within the step
            loop {
                if total <= 0.0 {
                    break;
                }
                let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
                if wait > remaining {
                    break;
                }
                remaining -= wait;
                let u: f64 = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut j = n - 1;
                for (i, r) in rates.iter().enumerate() {
                    acc += r;
                    if acc >= u {
                        j = i;
                        break;
                    }
                }
                let to = &pts[j * d..(j + 1) * d];
                let disp: Vec<f64> = (0..d).map(|k| to[k] - from[k]).collect();
                for k in 0..d {
                    x[k] += disp[k];
                }
                jumps.push(JumpEvent {
                    step: s,
                    time: t,
                    pre_state: from.clone(),
                    displacement: disp,
                });
                from = to.to_vec();
                total = fill_rates(&rev, &from, &pts, &tau, &mut rates)?;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        states.extend_from_slice(&x);
    }
    Ok(Path {
        dim: d,
        times,
        states,
        jumps,
        seed,
    })
}

fn fill_rates(rev: &ReversedDynamics, x: &[f64], pts: &[f64], tau: &[f64], out: &mut [f64]) -> Result<f64> {
    let d = x.len();
    let mut total = 0.0;
    for (j, r) in out.iter_mut().enumerate() {
        *r = tau[j] * rev.kernel(x, &pts[j * d..(j + 1) * d])?;
        total += *r;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{stable_stationary_density, FourierQuadrature};
    use crate::grid::Grid;
    use crate::model::{build_jump_kernel, Diffusion, Drift, JumpMap};

    fn ou(a: f64) -> ProcessSpec {
        let s = ProcessSpec::new("ou", 1).with_drift(Drift::gradient_quadratic(1, 1.0, None));
        if a > 0.0 {
            s.with_diffusion(Diffusion::identity(1, a))
        } else {
            s
        }
    }

    fn ex1() -> ProcessSpec {
        ou(1.0).with_jumps(
            1.0,
            LevyDensity::Gaussian {
                amplitude: 1.0,
                mean: vec![0.0],
                std: 1.0,
            },
            JumpMap::Relocate,
        )
    }

    fn stable(alpha: f64) -> ProcessSpec {
        ou(0.0).with_jumps(1.0, LevyDensity::stable(1, alpha), JumpMap::Identity)
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn deterministic_limit_and_weak_order() {
        let p = simulate_path(&ou(0.0), &[1.0], 5.0, 1e-4, 1).unwrap();
        assert!((p.last()[0] - (-5f64).exp()).abs() < 1e-3);
        assert_eq!(p.times.len(), 50_001);
        assert_eq!(*p.times.last().unwrap(), 5.0);
        let bias = |dt: f64| (simulate_path(&ou(0.0), &[1.0], 1.0, dt, 0).unwrap().last()[0] - (-1f64).exp()).abs();
        let r = bias(0.01) / bias(0.005);
        assert!((r - 2.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn ou_stationary_variance() {
        let x = terminal_states(&ou(1.0), &Initial::Point(vec![0.0]), 10.0, 0.01, 100_000, 11).unwrap();
        let (_, v) = mean_var(&x);
        assert!((v - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn jumps_land_where_the_map_sends_them() {
        let spec = ex1();
        let p = simulate_path(&spec, &[3.0], 200.0, 1e-2, 21).unwrap();
        let post: Vec<f64> = p.jumps.iter().map(|j| j.pre_state[0] + j.displacement[0]).collect();
        let (m, v) = mean_var(&post);
        assert!(post.len() > 300 && m.abs() < 0.1 && (v - 1.0).abs() < 0.15, "{m} {v}");

        let shift = ou(1.0).with_jumps(
            1.0,
            LevyDensity::Gaussian {
                amplitude: 1.0,
                mean: vec![0.3],
                std: 0.5,
            },
            JumpMap::Identity,
        );
        let p = simulate_path(&shift, &[0.0], 200.0, 1e-2, 22).unwrap();
        let d: Vec<f64> = p.jumps.iter().map(|j| j.displacement[0]).collect();
        let (m, v) = mean_var(&d);
        assert!((m - 0.3).abs() < 0.05 && (v - 0.25).abs() < 0.05, "{m} {v}");
    }

    #[test]
    fn jump_counts_are_poisson() {
        let spec = ProcessSpec::new("cp", 1).with_jumps(
            2.0,
            LevyDensity::Gaussian {
                amplitude: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
                mean: vec![0.0],
                std: 1.0,
            },
            JumpMap::Identity,
        );
        let e = simulate_ensemble(&spec, &Initial::Point(vec![0.0]), 10.0, 0.01, 10_000, 3).unwrap();
        let counts: Vec<f64> = e.paths.iter().map(|p| p.jumps.len() as f64).collect();
        let (m, _) = mean_var(&counts);
        assert!((m - 20.0).abs() < 0.5, "{m}");
        // cadlag bookkeeping: state after a jump step = before + continuous + Δ
        let p = &e.paths[0];
        for j in &p.jumps {
            assert_eq!(j.pre_state[0], p.state(j.step)[0]);
            assert!((p.state(j.step + 1)[0] - p.state(j.step)[0] - j.displacement[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_are_deterministic() {
        let a = simulate_path(&ex1(), &[3.0], 2.0, 1e-3, 42).unwrap();
        let b = simulate_path(&ex1(), &[3.0], 2.0, 1e-3, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&ex1(), &[3.0], 2.0, 1e-3, 43).unwrap();
        assert_ne!(a, c);
        assert_ne!(path_seed(1, 0), path_seed(1, 1));
        assert_ne!(path_seed(1, 0), path_seed(2, 0));
    }

    #[test]
    fn rejects_large_steps_and_bad_alpha() {
        assert!(simulate_path(&ex1(), &[0.0], 1.0, 0.05, 0).is_err());
        assert!(simulate_stable_path(&stable(2.5), 0.0, 1.0, 0.01, 0, 0.1).is_err());
        assert!(simulate_stable_path(&ou(1.0), 0.0, 1.0, 0.01, 0, 0.1).is_err());
    }

    #[test]
    fn cms_sampler_matches_cauchy_quantiles() {
        let mut rng = rng_from_seed(5);
        let mut v: Vec<f64> = (0..200_000).map(|_| sample_symmetric_stable(&mut rng, 1.0 + 1e-9)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q75 = v[150_000];
        assert!((q75 - 1.0).abs() < 0.02, "{q75}");
    }

    #[test]
    fn near_gaussian_stable_matches_ou() {
        let x = terminal_states(&stable(1.999), &Initial::Point(vec![0.0]), 10.0, 0.01, 20_000, 8).unwrap();
        // heavy tails leave a few huge values; compare the interquartile range
        let mut s = x.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = s[15_000] - s[5_000];
        let gaussian = 2.0 * 0.674_489_750_196_081_7;
        assert!((iqr / gaussian - 1.0).abs() < 0.05, "{iqr}");
    }

    #[test]
    fn stable_ensemble_matches_fourier_density() {
        let alpha = 1.5;
        let x = terminal_states(&stable(alpha), &Initial::Point(vec![0.0]), 20.0, 0.01, 100_000, 21).unwrap();
        let below = x.iter().filter(|v| **v <= 0.0).count() as f64 / x.len() as f64;
        assert!((below - 0.5).abs() < 0.01);
        let grid = Grid::new_1d(-40.0, 40.0, 1601).unwrap();
        let rho = stable_stationary_density(alpha, &grid, FourierQuadrature::default_for(alpha)).unwrap();
        // CDF on the grid from the raw pointwise values plus the analytic tail
        let tail = stable_constant(1, alpha) / alpha * 40f64.powf(-alpha) / alpha;
        let h = grid.spacing(0);
        let mut cdf = vec![tail];
        for i in 1..grid.len() {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * h * (rho.pointwise[i - 1] + rho.pointwise[i]));
        }
        let mut s = x.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len() as f64;
        let nodes = grid.axis(0).nodes();
        let mut ks: f64 = 0.0;
        for (i, t) in nodes.iter().enumerate() {
            let emp = s.partition_point(|v| v <= t) as f64 / n;
            ks = ks.max((emp - cdf[i]).abs());
        }
        assert!(ks < 0.01, "{ks}");
    }

    #[test]
    fn reversal_of_equilibrium_specs() {
        let grid = Grid::new_1d(-8.0, 8.0, 641).unwrap();
        let gibbs = DensityField::from_fn(grid, 0.0, |p| (-0.5 * p[0] * p[0]).exp() / (2.0 * std::f64::consts::PI).sqrt()).unwrap();
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let rev = ReversedDynamics::new(&spec, &k, &gibbs).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..100 {
            let x = rng.gen_range(-4.0..4.0);
            let y = rng.gen_range(-4.0..4.0);
            let mut br = [0.0];
            rev.drift(&[x], &mut br).unwrap();
            assert!((br[0] + x).abs() < 1e-10);
            let kr = rev.kernel(&[x], &[y]).unwrap();
            assert!((kr - k.rate(&[x], &[y])).abs() < 1e-10);
        }
        let o = ou(1.0);
        let rev = ReversedDynamics::new(&o, &JumpKernel::zero(), &gibbs).unwrap();
        let mut br = [0.0];
        rev.drift(&[1.3], &mut br).unwrap();
        assert!((br[0] + 1.3).abs() < 1e-10);
        assert!(matches!(rev.drift(&[30.0], &mut br), Err(Error::ReversalUndefined { .. })));
    }

    #[test]
    fn reversed_stable_kernel_is_density_ratio() {
        let alpha = 1.5;
        let spec = stable(alpha);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-40.0, 40.0, 1601).unwrap();
        let rho = stable_stationary_density(alpha, &grid, FourierQuadrature::default_for(alpha)).unwrap();
        let rev = ReversedDynamics::new(&spec, &k, &rho.field).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            let y: f64 = rng.gen_range(-10.0..10.0);
            if (x - y).abs() < 1e-3 {
                continue;
            }
            let ratio = rev.kernel(&[x], &[y]).unwrap() / k.rate(&[x], &[y]);
            let direct = rev.density(&[y]).unwrap() / rev.density(&[x]).unwrap();
            assert!((ratio - direct).abs() < 1e-10 * direct.max(1.0));
        }
        assert!(simulate_reversed_path(&spec, &k, &rho.field, &[0.0], 1.0, 0.01, 0).is_err());
    }

    #[test]
    fn reversed_example_one_path_stays_stationary() {
        let grid = Grid::new_1d(-8.0, 8.0, 321).unwrap();
        let v = grid.axis(0).nodes().iter().map(|x| (-0.5 * x * x).exp()).collect();
        let gibbs = DensityField::normalized(grid, v, 0.0).unwrap();
        let spec = ex1();
        let k = build_jump_kernel(&spec).unwrap();
        let p = simulate_reversed_path(&spec, &k, &gibbs, &[0.0], 200.0, 0.01, 2).unwrap();
        let xs: Vec<f64> = (0..p.len()).step_by(10).map(|i| p.state(i)[0]).collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.15 && (v - 1.0).abs() < 0.2, "{m} {v}");
        let rate = p.jumps.len() as f64 / 200.0;
        assert!((rate - (2.0 * std::f64::consts::PI).sqrt()).abs() < 0.4, "{rate}");
    }
}
