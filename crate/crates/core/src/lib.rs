//! Numerical toolkit for jump diffusions
//! `dX = b(X) dt + √(2/β) a(X)∘dB + jumps`: nonlocal Fokker–Planck
//! solver, entropy production by density quadrature and by path-space
//! relative entropy, time reversal, and reversibility diagnostics.

pub mod builtin;
pub mod density;
pub mod error;
pub mod fokker_planck;
pub mod girsanov;
pub mod grid;
pub mod model;
pub mod quadrature;
pub mod reversibility;
pub mod simulate;
pub mod thermo;

pub use density::{estimate_density, log_density_gradient, stable_stationary_density, GradientField};
pub use error::{Error, Result};
pub use fokker_planck::{solve_fpe, stationary_residual, CurrentField, Discretization, FpeConfig, FpeRun};
pub use grid::{Axis, DensityField, Grid};
pub use model::{
    build_jump_kernel, stable_constant, Diffusion, Drift, JumpDriver, JumpKernel, JumpMap, LevyDensity,
    ProcessSpec,
};
pub use quadrature::{BandConfig, BandModel};
pub use girsanov::{estimate_epr_kl, pathwise_log_rn, KlEstimate, LogRnAccumulator};
pub use simulate::{simulate_path, simulate_reversed_path, simulate_stable_path, Path, PathEnsemble};
pub use reversibility::{full_report, ReversibilityReport, Thresholds};
pub use thermo::{entropy_production_rate, ForceDecomposition, ThermoSeries};

