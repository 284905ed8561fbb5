//! Process specifications: coefficients of the jump diffusion, the jump
//! kernel they induce, and numerical checks of the standing assumptions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::DensityField;
use crate::quadrature::gauss_legendre_on;

pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type PairVecFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;

/// Finite-difference step for `∇·A` when no closed form is registered.
pub const DIV_A_STEP: f64 = 1e-5;

const STACK: usize = 8;

/// Run `f` with a zeroed scratch buffer of length `n`.
#[inline]
fn with_buf<T>(n: usize, f: impl FnOnce(&mut [f64]) -> T) -> T {
    if n <= STACK {
        let mut b = [0.0; STACK];
        f(&mut b[..n])
    } else {
        f(&mut vec![0.0; n])
    }
}

/// Normalization of the fractional Laplacian kernel in `n` dimensions,
/// `C_{n,α} = α 2^(α-1) Γ((n+α)/2) / (π^(n/2) Γ(1-α/2))`.
pub fn stable_constant(n: usize, alpha: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let nf = n as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma(0.5 * (nf + alpha))
        / (std::f64::consts::PI.powf(0.5 * nf) * gamma(1.0 - 0.5 * alpha))
}

#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `b(x) = M x + c` with `M` row-major.
    Linear { matrix: Vec<f64>, offset: Vec<f64> },
    Custom { label: String, f: VecFn },
}

impl Drift {
    /// `b(x) = -k (x - c)`.
    pub fn gradient_quadratic(dim: usize, stiffness: f64, center: Option<Vec<f64>>) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = -stiffness;
        }
        let c = center.unwrap_or_else(|| vec![0.0; dim]);
        let offset = c.iter().map(|v| stiffness * v).collect();
        Drift::Linear { matrix, offset }
    }

    pub fn linear(matrix: Vec<f64>, offset: Option<Vec<f64>>) -> Self {
        let n = (matrix.len() as f64).sqrt().round() as usize;
        Drift::Linear {
            offset: offset.unwrap_or_else(|| vec![0.0; n]),
            matrix,
        }
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Drift::Custom {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Drift::Linear { matrix, offset } => {
                let n = x.len();
                for i in 0..n {
                    let row = &matrix[i * n..(i + 1) * n];
                    out[i] = offset[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Drift::Custom { f, .. } => f(x, out),
        }
    }

    /// Scale the drift by a constant factor.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Drift::Zero => Drift::Zero,
            Drift::Linear { matrix, offset } => Drift::Linear {
                matrix: matrix.iter().map(|v| v * factor).collect(),
                offset: offset.iter().map(|v| v * factor).collect(),
            },
            Drift::Custom { label, f } => {
                let f = f.clone();
                Drift::Custom {
                    label: format!("{label}*{factor}"),
                    f: Arc::new(move |x, out| {
                        f(x, out);
                        out.iter_mut().for_each(|v| *v *= factor);
                    }),
                }
            }
        }
    }

    fn describe(&self, dim: usize) -> Value {
        match self {
            Drift::Zero => json!({"family": "zero"}),
            Drift::Linear { matrix, offset } => json!({
                "family": "linear",
                "matrix": rows(matrix, dim),
                "offset": offset,
            }),
            Drift::Custom { label, .. } => json!({"family": "custom", "label": label}),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Drift::Zero"),
            Drift::Linear { matrix, offset } => f
                .debug_struct("Drift::Linear")
                .field("matrix", matrix)
                .field("offset", offset)
                .finish(),
            Drift::Custom { label, .. } => write!(f, "Drift::Custom({label})"),
        }
    }
}

/// Diffusion factor `a(x)`; the diffusion matrix is `A = a aᵀ`.
#[derive(Clone)]
pub enum Diffusion {
    Zero,
    Constant { factor: Vec<f64> },
    Custom {
        label: String,
        factor: VecFn,
        divergence: Option<VecFn>,
    },
}

impl Diffusion {
    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut factor = vec![0.0; dim * dim];
        for i in 0..dim {
            factor[i * dim + i] = scale;
        }
        Diffusion::Constant { factor }
    }

    pub fn custom(label: impl Into<String>, factor: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Diffusion::Custom {
            label: label.into(),
            factor: Arc::new(factor),
            divergence: None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Diffusion::Zero => true,
            Diffusion::Constant { factor } => factor.iter().all(|v| *v == 0.0),
            Diffusion::Custom { .. } => false,
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, Diffusion::Custom { .. })
    }

    /// `a(x)` row-major into `out` (length `n²`).
    #[inline]
    pub fn factor(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Diffusion::Constant { factor } => out.copy_from_slice(factor),
            Diffusion::Custom { factor, .. } => factor(x, out),
        }
    }

    /// `A(x) = a(x) a(x)ᵀ` row-major into `out`.
    pub fn matrix(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        with_buf(n * n, |a| {
            self.factor(x, a);
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
                }
            }
        });
    }

    /// `(∇·A)_i = Σ_j ∂_j A_ij`.
    pub fn divergence(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Zero | Diffusion::Constant { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            Diffusion::Custom {
                divergence: Some(d),
                ..
            } => d(x, out),
            Diffusion::Custom { .. } => {
                let n = x.len();
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut xp = x.to_vec();
                let mut ap = vec![0.0; n * n];
                let mut am = vec![0.0; n * n];
                for j in 0..n {
                    xp[j] = x[j] + DIV_A_STEP;
                    self.matrix(&xp, &mut ap);
                    xp[j] = x[j] - DIV_A_STEP;
                    self.matrix(&xp, &mut am);
                    xp[j] = x[j];
                    for i in 0..n {
                        out[i] += (ap[i * n + j] - am[i * n + j]) / (2.0 * DIV_A_STEP);
                    }
                }
            }
        }
    }

    fn describe(&self, dim: usize) -> Value {
        match self {
            Diffusion::Zero => json!({"family": "zero"}),
            Diffusion::Constant { factor } => json!({"family": "constant", "matrix": rows(factor, dim)}),
            Diffusion::Custom { label, .. } => json!({"family": "custom", "label": label}),
        }
    }
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Zero => write!(f, "Diffusion::Zero"),
            Diffusion::Constant { factor } => write!(f, "Diffusion::Constant({factor:?})"),
            Diffusion::Custom { label, .. } => write!(f, "Diffusion::Custom({label})"),
        }
    }
}

/// Lévy density `m(z)` with `ν(dz) = m(z) dz`.
#[derive(Clone)]
pub enum LevyDensity {
    /// `amplitude · exp(-|z - mean|² / (2 std²))`.
    Gaussian { amplitude: f64, mean: Vec<f64>, std: f64 },
    /// `constant · |z|^-(n+α)`; infinite mass, simulated as a stable driver.
    Stable { alpha: f64, constant: f64 },
    Custom {
        label: String,
        density: ScalarFn,
        mass: f64,
        sampler: Option<SamplerFn>,
    },
}

impl LevyDensity {
    pub fn stable(dim: usize, alpha: f64) -> Self {
        LevyDensity::Stable {
            alpha,
            constant: stable_constant(dim, alpha),
        }
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            LevyDensity::Gaussian { amplitude, mean, std } => {
                let r2: f64 = z.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
                amplitude * (-0.5 * r2 / (std * std)).exp()
            }
            LevyDensity::Stable { alpha, constant } => {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                if r2 == 0.0 {
                    return f64::INFINITY;
                }
                constant * r2.powf(-0.5 * (z.len() as f64 + alpha))
            }
            LevyDensity::Custom { density, .. } => density(z),
        }
    }

    /// Total mass `‖m‖₁`, `None` for infinite-activity densities.
    pub fn mass(&self, dim: usize) -> Option<f64> {
        match self {
            LevyDensity::Gaussian { amplitude, std, .. } => {
                Some(amplitude * (2.0 * std::f64::consts::PI).powf(0.5 * dim as f64) * std.powi(dim as i32))
            }
            LevyDensity::Stable { .. } => None,
            LevyDensity::Custom { mass, .. } => Some(*mass),
        }
    }

    /// Draw `z ~ m / ‖m‖₁`.
    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) -> Result<()> {
        match self {
            LevyDensity::Gaussian { mean, std, .. } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let g: f64 = rng.sample(StandardNormal);
                    *o = m + std * g;
                }
                Ok(())
            }
            LevyDensity::Stable { .. } => Err(Error::Unsupported(
                "stable Lévy densities are sampled as increments, not jump sizes".into(),
            )),
            LevyDensity::Custom { sampler: Some(s), .. } => {
                s(rng, out);
                Ok(())
            }
            LevyDensity::Custom { label, .. } => Err(Error::Unsupported(format!(
                "custom Lévy density `{label}` has no sampler"
            ))),
        }
    }

    pub fn singularity_order(&self, dim: usize) -> Option<f64> {
        match self {
            LevyDensity::Stable { alpha, .. } => Some(dim as f64 + alpha),
            _ => None,
        }
    }

    fn describe(&self) -> Value {
        match self {
            LevyDensity::Gaussian { amplitude, mean, std } => json!({
                "family": "gaussian", "amplitude": amplitude, "mean": mean, "std": std,
            }),
            LevyDensity::Stable { alpha, constant } => json!({
                "family": "stable", "alpha": alpha, "constant": constant,
            }),
            LevyDensity::Custom { label, mass, .. } => json!({
                "family": "custom", "label": label, "mass": mass,
            }),
        }
    }
}

impl fmt::Debug for LevyDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LevyDensity({})", self.describe())
    }
}

/// Jump map `σ(x, z)`: a jump of mark `z` from `x` lands at `x + σ(x, z)`.
#[derive(Clone)]
pub enum JumpMap {
    /// `σ(x, z) = z`.
    Identity,
    /// `σ(x, z) = z - x`: the process jumps to the mark itself.
    Relocate,
    /// `σ(x, z) = c z`.
    Scaled { factor: f64 },
    Custom {
        label: String,
        forward: PairVecFn,
        inverse: PairVecFn,
        inverse_jacobian_det: PairFn,
    },
}

impl JumpMap {
    #[inline]
    pub fn forward(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        match self {
            JumpMap::Identity => out.copy_from_slice(z),
            JumpMap::Relocate => {
                for i in 0..out.len() {
                    out[i] = z[i] - x[i];
                }
            }
            JumpMap::Scaled { factor } => {
                for i in 0..out.len() {
                    out[i] = factor * z[i];
                }
            }
            JumpMap::Custom { forward, .. } => forward(x, z, out),
        }
    }

    #[inline]
    pub fn inverse(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            JumpMap::Identity => out.copy_from_slice(w),
            JumpMap::Relocate => {
                for i in 0..out.len() {
                    out[i] = w[i] + x[i];
                }
            }
            JumpMap::Scaled { factor } => {
                for i in 0..out.len() {
                    out[i] = w[i] / factor;
                }
            }
            JumpMap::Custom { inverse, .. } => inverse(x, w, out),
        }
    }

    #[inline]
    pub fn inverse_jacobian_det(&self, x: &[f64], w: &[f64]) -> f64 {
        match self {
            JumpMap::Identity | JumpMap::Relocate => 1.0,
            JumpMap::Scaled { factor } => factor.abs().powi(-(x.len() as i32)),
            JumpMap::Custom {
                inverse_jacobian_det,
                ..
            } => inverse_jacobian_det(x, w),
        }
    }

    fn describe(&self) -> Value {
        match self {
            JumpMap::Identity => json!({"family": "identity"}),
            JumpMap::Relocate => json!({"family": "relocate"}),
            JumpMap::Scaled { factor } => json!({"family": "scaled", "factor": factor}),
            JumpMap::Custom { label, .. } => json!({"family": "custom", "label": label}),
        }
    }
}

impl fmt::Debug for JumpMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JumpMap({})", self.describe())
    }
}

#[derive(Clone)]
enum KernelRepr {
    Zero,
    Closed(PairFn),
    Derived {
        rate: f64,
        levy: LevyDensity,
        map: JumpMap,
    },
}

/// Jump kernel `k(x, y)`: the rate density of jumps from `x` to `y`.
#[derive(Clone)]
pub struct JumpKernel {
    repr: KernelRepr,
    singularity_order: Option<f64>,
    symmetric: bool,
}

impl JumpKernel {
    pub fn zero() -> Self {
        Self {
            repr: KernelRepr::Zero,
            singularity_order: None,
            symmetric: true,
        }
    }

    pub fn closed_form(
        rate: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        singularity_order: Option<f64>,
    ) -> Self {
        Self {
            repr: KernelRepr::Closed(Arc::new(rate)),
            singularity_order,
            symmetric: false,
        }
    }

    /// Declare the kernel symmetric, `k(x, y) = k(y, x)`.
    pub fn with_symmetry(mut self, symmetric: bool) -> Self {
        self.symmetric = symmetric;
        self
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.repr, KernelRepr::Zero)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn singularity_order(&self) -> Option<f64> {
        self.singularity_order
    }

    /// `(c, α)` when `k(x, y) = c |x - y|^(-1-α)` in 1D.
    pub fn stable_tail(&self) -> Option<(f64, f64)> {
        match &self.repr {
            KernelRepr::Derived {
                rate,
                levy: LevyDensity::Stable { alpha, constant },
                map: JumpMap::Identity,
            } => Some((rate * constant, *alpha)),
            _ => None,
        }
    }

    /// `k(x, y)` without assumption checks.
    #[inline]
    pub fn rate(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.repr {
            KernelRepr::Zero => 0.0,
            KernelRepr::Closed(f) => f(x, y),
            KernelRepr::Derived { rate, levy, map } => {
                let n = x.len();
                with_buf(2 * n, |buf| {
                    let (w, z) = buf.split_at_mut(n);
                    for i in 0..n {
                        w[i] = y[i] - x[i];
                    }
                    map.inverse(x, w, z);
                    rate * levy.eval(z) * map.inverse_jacobian_det(x, w)
                })
            }
        }
    }

    /// `k(x, y)` with the non-degeneracy and sign checks applied.
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if let KernelRepr::Derived { map, .. } = &self.repr {
            let w: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
            let det = map.inverse_jacobian_det(x, &w);
            if !(det > 0.0) {
                return Err(Error::Assumption(format!(
                    "jump map inverse Jacobian determinant {det} <= 0 at x = {x:?}, w = {w:?}"
                )));
            }
        }
        let k = self.rate(x, y);
        if k.is_nan() || k < 0.0 {
            return Err(Error::KernelPositivity {
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        if !k.is_finite() {
            return Err(Error::KernelSingularity {
                x: x.to_vec(),
                y: y.to_vec(),
            });
        }
        Ok(k)
    }
}

impl fmt::Debug for JumpKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            KernelRepr::Zero => "zero".to_string(),
            KernelRepr::Closed(_) => "closed-form".to_string(),
            KernelRepr::Derived { rate, levy, map } => format!("{rate}·{levy:?}∘{map:?}"),
        };
        f.debug_struct("JumpKernel")
            .field("kind", &kind)
            .field("singularity_order", &self.singularity_order)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

/// How the jumps of a spec are driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpDriver {
    None,
    CompoundPoisson { total_rate: f64 },
    Stable { alpha: f64 },
}

/// Full coefficient bundle of a jump diffusion
/// `dX = b dt + √(2/β) a∘dB + jumps`.
#[derive(Clone, Debug)]
pub struct ProcessSpec {
    pub label: String,
    pub dim: usize,
    pub beta: f64,
    pub drift: Drift,
    pub diffusion: Diffusion,
    pub jump_rate: f64,
    pub levy: Option<LevyDensity>,
    pub jump_map: Option<JumpMap>,
    pub kernel_override: Option<JumpKernel>,
}

impl ProcessSpec {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Self {
            label: label.into(),
            dim,
            beta: 1.0,
            drift: Drift::Zero,
            diffusion: Diffusion::Zero,
            jump_rate: 0.0,
            levy: None,
            jump_map: None,
            kernel_override: None,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_diffusion(mut self, diffusion: Diffusion) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_jumps(mut self, rate: f64, levy: LevyDensity, map: JumpMap) -> Self {
        self.jump_rate = rate;
        self.levy = Some(levy);
        self.jump_map = Some(map);
        self
    }

    pub fn with_kernel(mut self, kernel: JumpKernel) -> Self {
        self.kernel_override = Some(kernel);
        self
    }

    #[inline]
    pub fn theta(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn has_jumps(&self) -> bool {
        self.kernel_override.is_some() || (self.jump_rate > 0.0 && self.levy.is_some())
    }

    pub fn driver(&self) -> JumpDriver {
        if self.jump_rate <= 0.0 {
            return JumpDriver::None;
        }
        match &self.levy {
            None => JumpDriver::None,
            Some(LevyDensity::Stable { alpha, .. }) => JumpDriver::Stable { alpha: *alpha },
            Some(l) => JumpDriver::CompoundPoisson {
                total_rate: self.jump_rate * l.mass(self.dim).unwrap_or(f64::INFINITY),
            },
        }
    }

    /// Itô drift `b + β⁻¹ ∇·A`.
    pub fn ito_drift(&self, x: &[f64], out: &mut [f64]) {
        self.drift.eval(x, out);
        if !self.diffusion.is_constant() {
            let n = self.dim;
            with_buf(n, |d| {
                self.diffusion.divergence(x, d);
                for i in 0..n {
                    out[i] += d[i] / self.beta;
                }
            });
        }
    }

    /// Structural checks plus pointwise checks at `probes`.
    pub fn validate(&self, probes: &[Vec<f64>]) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be a positive real"));
        }
        if !(self.jump_rate >= 0.0 && self.jump_rate.is_finite()) {
            return Err(Error::config("lambda", "must be a nonnegative real"));
        }
        if let Drift::Linear { matrix, offset } = &self.drift {
            if matrix.len() != self.dim * self.dim || offset.len() != self.dim {
                return Err(Error::config("drift", "matrix/offset shape does not match dim"));
            }
        }
        if let Diffusion::Constant { factor } = &self.diffusion {
            if factor.len() != self.dim * self.dim {
                return Err(Error::config("diffusion.matrix", "shape does not match dim"));
            }
        }
        if self.jump_rate > 0.0 {
            match (&self.jump_map, &self.kernel_override) {
                (Some(_), Some(_)) => {
                    return Err(Error::config(
                        "jump_map",
                        "give either a jump map or a kernel override, not both",
                    ))
                }
                (None, None) => {
                    return Err(Error::config(
                        "jump_map",
                        "jump rate is positive but neither a jump map nor a kernel override is given",
                    ))
                }
                (Some(_), None) if self.levy.is_none() => {
                    return Err(Error::config("levy", "jump map given without a Lévy density"))
                }
                _ => {}
            }
        }
        if let Some(LevyDensity::Stable { alpha, .. }) = &self.levy {
            if !(*alpha > 0.0 && *alpha < 2.0) {
                return Err(Error::config("levy.alpha", "must lie in (0, 2)"));
            }
        }
        let n = self.dim;
        let zero = self.diffusion.is_zero();
        let mut a = vec![0.0; n * n];
        for p in probes {
            self.diffusion.matrix(p, &mut a);
            for i in 0..n {
                for j in 0..i {
                    if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                        return Err(Error::Assumption(format!("A is not symmetric at {p:?}")));
                    }
                }
            }
            if !zero && !is_positive_definite(&a, n) {
                return Err(Error::Assumption(format!(
                    "A must be positive definite or identically zero; fails at {p:?}"
                )));
            }
            if let Some(l) = &self.levy {
                let v = l.eval(p);
                if v.is_nan() || v < 0.0 {
                    return Err(Error::Assumption(format!("Lévy density negative at {p:?}")));
                }
            }
        }
        Ok(())
    }

    /// Spec document in the JSON schema accepted by [`ProcessSpec::from_json`].
    pub fn to_document(&self) -> Value {
        let mut doc = json!({
            "label": self.label,
            "dim": self.dim,
            "beta": self.beta,
            "lambda": self.jump_rate,
            "drift": self.drift.describe(self.dim),
            "diffusion": self.diffusion.describe(self.dim),
        });
        if let Some(l) = &self.levy {
            doc["levy"] = l.describe();
        }
        if let Some(m) = &self.jump_map {
            doc["jump_map"] = m.describe();
        }
        if self.kernel_override.is_some() {
            doc["kernel"] = json!({"family": "custom"});
        }
        doc
    }

    /// SHA-256 of the canonical (sorted-key) spec document.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(&self.to_document()).expect("spec document serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_json(&v)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    pub fn from_json(doc: &Value) -> Result<Self> {
        let obj = as_object(doc, "")?;
        check_keys(
            obj,
            "",
            &["label", "dim", "beta", "lambda", "drift", "diffusion", "levy", "jump_map"],
        )?;
        let dim = get_usize(obj, "", "dim")?.ok_or_else(|| Error::config("dim", "missing"))?;
        if dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        let label = match obj.get("label") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("label", "must be a string")),
            None => "spec".to_string(),
        };
        let beta = get_f64(obj, "", "beta")?.unwrap_or(1.0);
        let lambda = get_f64(obj, "", "lambda")?.unwrap_or(0.0);
        let drift = match obj.get("drift") {
            None | Some(Value::Null) => Drift::Zero,
            Some(v) => parse_drift(v, dim)?,
        };
        let diffusion = match obj.get("diffusion") {
            None | Some(Value::Null) => Diffusion::Zero,
            Some(v) => parse_diffusion(v, dim)?,
        };
        let levy = match obj.get("levy") {
            None | Some(Value::Null) => None,
            Some(v) => parse_levy(v, dim)?,
        };
        let jump_map = match obj.get("jump_map") {
            None | Some(Value::Null) => None,
            Some(v) => Some(parse_map(v)?),
        };
        let spec = ProcessSpec {
            label,
            dim,
            beta,
            drift,
            diffusion,
            jump_rate: lambda,
            levy,
            jump_map,
            kernel_override: None,
        };
        spec.validate(&[vec![0.0; dim]])?;
        Ok(spec)
    }
}

fn is_positive_definite(a: &[f64], n: usize) -> bool {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

fn rows(m: &[f64], n: usize) -> Vec<Vec<f64>> {
    m.chunks(n.max(1)).map(|r| r.to_vec()).collect()
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| {
        Error::config(if path.is_empty() { "$" } else { path }, "expected a JSON object")
    })
}

fn check_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<()> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::config(join(path, k), "unknown key"));
        }
    }
    Ok(())
}

fn get_f64(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::config(join(path, key), "expected a number")),
    }
}

fn get_usize(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Option<usize>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|u| Some(u as usize))
            .ok_or_else(|| Error::config(join(path, key), "expected a nonnegative integer")),
    }
}

fn get_vec(obj: &Map<String, Value>, path: &str, key: &str, n: usize) -> Result<Option<Vec<f64>>> {
    let p = join(path, key);
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(a)) => {
            if a.len() != n {
                return Err(Error::config(p, format!("expected {n} entries")));
            }
            a.iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_f64()
                        .ok_or_else(|| Error::config(format!("{p}[{i}]"), "expected a number"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        }
        Some(_) => Err(Error::config(p, "expected an array")),
    }
}

fn get_matrix(obj: &Map<String, Value>, path: &str, key: &str, n: usize) -> Result<Option<Vec<f64>>> {
    let p = join(path, key);
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(rows)) => {
            if rows.len() != n {
                return Err(Error::config(p, format!("expected {n} rows")));
            }
            let mut out = Vec::with_capacity(n * n);
            for (i, r) in rows.iter().enumerate() {
                let rp = format!("{p}[{i}]");
                let r = r
                    .as_array()
                    .ok_or_else(|| Error::config(rp.clone(), "expected an array"))?;
                if r.len() != n {
                    return Err(Error::config(rp, format!("expected {n} columns")));
                }
                for (j, v) in r.iter().enumerate() {
                    out.push(
                        v.as_f64()
                            .ok_or_else(|| Error::config(format!("{p}[{i}][{j}]"), "expected a number"))?,
                    );
                }
            }
            Ok(Some(out))
        }
        Some(_) => Err(Error::config(p, "expected an array of rows")),
    }
}

fn family<'a>(obj: &'a Map<String, Value>, path: &str) -> Result<&'a str> {
    match obj.get("family") {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(Error::config(join(path, "family"), "expected a string")),
        None => Err(Error::config(join(path, "family"), "missing")),
    }
}

fn parse_drift(v: &Value, n: usize) -> Result<Drift> {
    let path = "drift";
    let obj = as_object(v, path)?;
    match family(obj, path)? {
        "zero" => {
            check_keys(obj, path, &["family"])?;
            Ok(Drift::Zero)
        }
        "linear" => {
            check_keys(obj, path, &["family", "matrix", "offset"])?;
            let matrix = get_matrix(obj, path, "matrix", n)?
                .ok_or_else(|| Error::config("drift.matrix", "missing"))?;
            let offset = get_vec(obj, path, "offset", n)?.unwrap_or_else(|| vec![0.0; n]);
            Ok(Drift::Linear { matrix, offset })
        }
        "gradient_quadratic" => {
            check_keys(obj, path, &["family", "stiffness", "center"])?;
            let k = get_f64(obj, path, "stiffness")?.unwrap_or(1.0);
            let c = get_vec(obj, path, "center", n)?;
            Ok(Drift::gradient_quadratic(n, k, c))
        }
        other => Err(Error::config("drift.family", format!("unknown family `{other}`"))),
    }
}

fn parse_diffusion(v: &Value, n: usize) -> Result<Diffusion> {
    let path = "diffusion";
    let obj = as_object(v, path)?;
    match family(obj, path)? {
        "zero" => {
            check_keys(obj, path, &["family"])?;
            Ok(Diffusion::Zero)
        }
        "constant" => {
            check_keys(obj, path, &["family", "matrix"])?;
            let factor = get_matrix(obj, path, "matrix", n)?
                .ok_or_else(|| Error::config("diffusion.matrix", "missing"))?;
            Ok(Diffusion::Constant { factor })
        }
        "identity" => {
            check_keys(obj, path, &["family", "scale"])?;
            let s = get_f64(obj, path, "scale")?.unwrap_or(1.0);
            Ok(Diffusion::identity(n, s))
        }
        other => Err(Error::config("diffusion.family", format!("unknown family `{other}`"))),
    }
}

fn parse_levy(v: &Value, n: usize) -> Result<Option<LevyDensity>> {
    let path = "levy";
    let obj = as_object(v, path)?;
    match family(obj, path)? {
        "none" => {
            check_keys(obj, path, &["family"])?;
            Ok(None)
        }
        "gaussian" => {
            check_keys(obj, path, &["family", "amplitude", "mean", "std"])?;
            let amplitude = get_f64(obj, path, "amplitude")?.unwrap_or(1.0);
            let std = get_f64(obj, path, "std")?.unwrap_or(1.0);
            if !(std > 0.0) || !(amplitude >= 0.0) {
                return Err(Error::config("levy", "std must be positive and amplitude nonnegative"));
            }
            let mean = get_vec(obj, path, "mean", n)?.unwrap_or_else(|| vec![0.0; n]);
            Ok(Some(LevyDensity::Gaussian { amplitude, mean, std }))
        }
        "stable" => {
            check_keys(obj, path, &["family", "alpha", "constant"])?;
            let alpha = get_f64(obj, path, "alpha")?.ok_or_else(|| Error::config("levy.alpha", "missing"))?;
            if !(alpha > 0.0 && alpha < 2.0) {
                return Err(Error::config("levy.alpha", "must lie in (0, 2)"));
            }
            let constant = get_f64(obj, path, "constant")?.unwrap_or_else(|| stable_constant(n, alpha));
            Ok(Some(LevyDensity::Stable { alpha, constant }))
        }
        other => Err(Error::config("levy.family", format!("unknown family `{other}`"))),
    }
}

fn parse_map(v: &Value) -> Result<JumpMap> {
    let path = "jump_map";
    let obj = as_object(v, path)?;
    match family(obj, path)? {
        "identity" => {
            check_keys(obj, path, &["family"])?;
            Ok(JumpMap::Identity)
        }
        "relocate" => {
            check_keys(obj, path, &["family"])?;
            Ok(JumpMap::Relocate)
        }
        "scaled" => {
            check_keys(obj, path, &["family", "factor"])?;
            let factor = get_f64(obj, path, "factor")?.ok_or_else(|| Error::config("jump_map.factor", "missing"))?;
            if factor == 0.0 {
                return Err(Error::config("jump_map.factor", "must be nonzero"));
            }
            Ok(JumpMap::Scaled { factor })
        }
        other => Err(Error::config("jump_map.family", format!("unknown family `{other}`"))),
    }
}

/// Jump kernel of `spec`: the override verbatim if present, otherwise the
/// change of variables `k(x, y) = λ m(σ⁻¹(x, y-x)) det ∇σ⁻¹(x, y-x)`.
pub fn build_jump_kernel(spec: &ProcessSpec) -> Result<JumpKernel> {
    if let Some(k) = &spec.kernel_override {
        return Ok(k.clone());
    }
    if spec.jump_rate == 0.0 {
        return Ok(JumpKernel::zero());
    }
    let (levy, map) = match (&spec.levy, &spec.jump_map) {
        (Some(l), Some(m)) => (l.clone(), m.clone()),
        _ => {
            return Err(Error::config(
                "jump_map",
                "jump rate is positive but neither a jump map nor a kernel override is given",
            ))
        }
    };
    let symmetric = matches!(
        (&levy, &map),
        (LevyDensity::Stable { .. }, JumpMap::Identity | JumpMap::Scaled { .. })
    ) || matches!((&levy, &map), (LevyDensity::Gaussian { mean, .. }, JumpMap::Identity | JumpMap::Scaled { .. }) if mean.iter().all(|v| *v == 0.0));
    Ok(JumpKernel {
        singularity_order: levy.singularity_order(spec.dim),
        repr: KernelRepr::Derived {
            rate: spec.jump_rate,
            levy,
            map,
        },
        symmetric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    /// `∫_{|z|≤1} |z|² m(z) dz`.
    pub inner: f64,
    /// `∫_{|z|>1} m(z) dz`.
    pub outer: f64,
    pub value: f64,
    pub converged: bool,
}

/// Quadrature estimate of `∫ 1∧|z|² m(z) dz`, compared between
/// `quadrature_budget` and `2·quadrature_budget` dyadic radial panels.
pub fn check_integrability(spec: &ProcessSpec, quadrature_budget: usize) -> Result<IntegrabilityReport> {
    let levy = spec
        .levy
        .as_ref()
        .ok_or_else(|| Error::config("levy", "no Lévy density to check"))?;
    if spec.dim > 2 {
        return Err(Error::Unsupported("integrability check supports dim ≤ 2".into()));
    }
    let panels = quadrature_budget.max(4);
    let coarse = radial_integrals(levy, spec.dim, panels);
    let fine = radial_integrals(levy, spec.dim, 2 * panels);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let converged = fine.0.is_finite()
        && fine.1.is_finite()
        && rel(coarse.0, fine.0) <= 1e-3
        && rel(coarse.1, fine.1) <= 1e-3;
    Ok(IntegrabilityReport {
        inner: fine.0,
        outer: fine.1,
        value: fine.0 + fine.1,
        converged,
    })
}

/// Inner and outer parts of the integrability integral over `panels`
/// dyadic panels `[2^-(k+1), 2^-k]` in `r` (inner) and `1/r` (outer).
fn radial_integrals(levy: &LevyDensity, dim: usize, panels: usize) -> (f64, f64) {
    let directions: Vec<(Vec<f64>, f64)> = match dim {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        _ => {
            let m = 64;
            (0..m)
                .map(|i| {
                    let th = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    (vec![th.cos(), th.sin()], 2.0 * std::f64::consts::PI / m as f64)
                })
                .collect()
        }
    };
    let jac = |r: f64| r.powi(dim as i32 - 1);
    let (mut inner, mut outer) = (0.0, 0.0);
    let mut z = vec![0.0; dim];
    for k in 0..panels {
        let (a, b) = (0.5f64.powi(k as i32 + 1), 0.5f64.powi(k as i32));
        let (t, w) = gauss_legendre_on(16, a, b);
        for (&r, &wr) in t.iter().zip(&w) {
            for (d, wd) in &directions {
                for i in 0..dim {
                    z[i] = r * d[i];
                }
                inner += wd * wr * r * r * levy.eval(&z) * jac(r);
                let ro = 1.0 / r;
                for i in 0..dim {
                    z[i] = ro * d[i];
                }
                // dr = dt / t² under r = 1/t
                outer += wd * wr * levy.eval(&z) * jac(ro) / (r * r);
            }
        }
    }
    (inner, outer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub max_kbar: f64,
    pub violations: usize,
    pub samples: usize,
}

/// Sample `k̄(x, y) = k(x, y) log(k(x, y)/k(y, x))` with `x` drawn from
/// `density` and `y` uniform on its grid domain.
pub fn check_regularity_e(
    kernel: &JumpKernel,
    density: &DensityField,
    pair_samples: usize,
    seed: u64,
) -> Result<RegularityReport> {
    let grid = &density.grid;
    let sampler = density.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let mut max_kbar: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..pair_samples {
        sampler.sample(&mut rng, &mut x);
        for k in 0..d {
            let a = grid.axis(k);
            y[k] = a.lower + rng.gen::<f64>() * (a.upper - a.lower);
        }
        let kxy = kernel.rate(&x, &y);
        let kyx = kernel.rate(&y, &x);
        if !(kxy.is_finite() && kyx.is_finite()) {
            continue;
        }
        if (kxy > 0.0) != (kyx > 0.0) {
            violations += 1;
            continue;
        }
        if kxy > 0.0 {
            max_kbar = max_kbar.max((kxy * (kxy / kyx).ln()).abs());
        }
    }
    Ok(RegularityReport {
        max_kbar,
        violations,
        samples: pair_samples,
    })
}
