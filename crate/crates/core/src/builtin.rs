//! Ready-made models with their stationary densities on default grids.

use crate::density::{stable_stationary_density, FourierQuadrature};
use crate::error::Result;
use crate::grid::{DensityField, Grid};
use crate::model::{build_jump_kernel, Diffusion, Drift, JumpKernel, JumpMap, LevyDensity, ProcessSpec};
use crate::quadrature::{BandConfig, BandModel};

/// A model together with a grid, band settings and its stationary density.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub spec: ProcessSpec,
    pub kernel: JumpKernel,
    pub band: BandConfig,
    pub stationary: DensityField,
    /// Known answer for the reversibility checks.
    pub reversible: bool,
}

impl Builtin {
    pub fn grid(&self) -> &Grid {
        &self.stationary.grid
    }
}

fn gaussian_field(grid: Grid, var: &[f64]) -> Result<DensityField> {
    DensityField::from_fn(grid, 0.0, |x| {
        let mut q = 0.0;
        let mut c = 1.0;
        for (k, v) in var.iter().enumerate() {
            q += x[k] * x[k] / v;
            c *= 2.0 * std::f64::consts::PI * v;
        }
        (-0.5 * q).exp() / c.sqrt()
    })
}

/// `dX = -X dt + √2 dB` with relocation jumps to `N(0,1)` at unit rate
/// (`k(x,y) = e^{-y²/2}`).
pub fn example1_spec() -> ProcessSpec {
    ProcessSpec::new("example1", 1)
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

pub fn example1_on(grid: Grid) -> Result<Builtin> {
    let spec = example1_spec();
    let kernel = build_jump_kernel(&spec)?;
    let stationary = DensityField::normalized(
        grid.clone(),
        grid.axis(0).nodes().iter().map(|x| (-0.5 * x * x).exp()).collect(),
        0.0,
    )?;
    Ok(Builtin {
        spec,
        kernel,
        band: BandConfig::default(),
        stationary,
        reversible: true,
    })
}

/// On `[-8, 8]` with 321 nodes.
pub fn example1() -> Result<Builtin> {
    example1_on(Grid::new_1d(-8.0, 8.0, 321)?)
}

/// `dX = -X dt + dL^α`, no diffusion.
pub fn example2_spec(alpha: f64) -> ProcessSpec {
    ProcessSpec::new(format!("example2(alpha={alpha})"), 1)
        .with_drift(Drift::gradient_quadratic(1, 1.0, None))
        .with_jumps(1.0, LevyDensity::stable(1, alpha), JumpMap::Identity)
}

pub fn example2_on(alpha: f64, grid: Grid) -> Result<Builtin> {
    let spec = example2_spec(alpha);
    let kernel = build_jump_kernel(&spec)?;
    let stationary = stable_stationary_density(alpha, &grid, FourierQuadrature::default_for(alpha))?.field;
    Ok(Builtin {
        spec,
        kernel,
        band: BandConfig {
            cells: 2,
            model: BandModel::Taylor,
        },
        stationary,
        reversible: false,
    })
}

/// On `[-40, 40]` with 1601 nodes.
pub fn example2(alpha: f64) -> Result<Builtin> {
    example2_on(alpha, Grid::new_1d(-40.0, 40.0, 1601)?)
}

/// `dX = -2X dt + √2 dB`, stationary law `N(0, 1/2)`.
pub fn reversible_ou() -> Result<Builtin> {
    let spec = ProcessSpec::new("reversible_ou", 1)
        .with_drift(Drift::gradient_quadratic(1, 2.0, None))
        .with_diffusion(Diffusion::identity(1, 1.0));
    let stationary = gaussian_field(Grid::new_1d(-6.0, 6.0, 241)?, &[0.5])?;
    Ok(Builtin {
        spec,
        kernel: JumpKernel::zero(),
        band: BandConfig::default(),
        stationary,
        reversible: true,
    })
}

/// `b(x, y) = (-x + y, -y - x)`, `A = I`; stationary law `N(0, I)` carried
/// by a rotating current.
pub fn rotational_ou() -> Result<Builtin> {
    let spec = ProcessSpec::new("rotational_ou", 2)
        .with_drift(Drift::linear(vec![-1.0, 1.0, -1.0, -1.0], None))
        .with_diffusion(Diffusion::identity(2, 1.0));
    let stationary = gaussian_field(Grid::cube(2, -6.0, 6.0, 97)?, &[1.0, 1.0])?;
    Ok(Builtin {
        spec,
        kernel: JumpKernel::zero(),
        band: BandConfig::default(),
        stationary,
        reversible: false,
    })
}

/// Every built-in at its default resolution.
pub fn reference_set() -> Result<Vec<Builtin>> {
    Ok(vec![
        example1()?,
        reversible_ou()?,
        example2(1.5)?,
        example2(1.0)?,
        rotational_ou()?,
    ])
}

/// Look up a built-in by name (`example1`, `example2`, `reversible_ou`,
/// `rotational_ou`); `alpha` applies to `example2`.
pub fn by_name(name: &str, alpha: f64) -> Option<Result<Builtin>> {
    Some(match name {
        "example1" => example1(),
        "example2" => example2(alpha),
        "reversible_ou" => reversible_ou(),
        "rotational_ou" => rotational_ou(),
        _ => return None,
    })
}
