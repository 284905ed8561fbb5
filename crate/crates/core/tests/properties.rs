use proptest::prelude::*;

use jumpepr_core::builtin;
use jumpepr_core::fokker_planck::{currents, FluxScheme};
use jumpepr_core::model::{build_jump_kernel, Diffusion, Drift, JumpMap, LevyDensity, ProcessSpec};
use jumpepr_core::quadrature::{log_mean, BandModel};
use jumpepr_core::reversibility::{default_battery, generator_asymmetry_matrix};
use jumpepr_core::simulate::simulate_path;
use jumpepr_core::thermo::ThermoEvaluator;
use jumpepr_core::{BandConfig, DensityField, Discretization, Grid};

fn mixture(grid: &Grid, params: &[(f64, f64, f64)]) -> DensityField {
    DensityField::from_fn(grid.clone(), 0.0, |x| {
        params
            .iter()
            .map(|(w, m, s)| w * (-0.5 * ((x[0] - m) / s).powi(2)).exp())
            .sum::<f64>()
            + 1e-6
    })
    .unwrap()
}

fn component() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..1.0, -3.0f64..3.0, 0.4f64..2.0)
}

fn tilted_jump_spec(tilt: f64) -> ProcessSpec {
    ProcessSpec::new("tilted", 1)
        .with_drift(Drift::custom("tilted", move |x, out| out[0] = -x[0] + tilt * x[0].sin()))
        .with_diffusion(Diffusion::identity(1, 0.8))
        .with_jumps(
            0.7,
            LevyDensity::Gaussian {
                amplitude: 1.0,
                mean: vec![0.3],
                std: 0.8,
            },
            JumpMap::Identity,
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_preserves_mass(params in proptest::collection::vec(component(), 1..4), tilt in -1.0f64..1.0) {
        let spec = tilted_jump_spec(tilt);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 161).unwrap();
        let rho = mixture(&grid, &params);
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        for scheme in [FluxScheme::Auto, FluxScheme::LogMean, FluxScheme::Upwind] {
            let mut out = vec![0.0; disc.len()];
            disc.apply(&rho.values, scheme, &mut out);
            prop_assert!(grid.integrate(&out).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_production_is_nonnegative(params in proptest::collection::vec(component(), 1..4), tilt in -1.0f64..1.0) {
        let spec = tilted_jump_spec(tilt);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 161).unwrap();
        let rho = mixture(&grid, &params);
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        let e = ThermoEvaluator::new(&disc, None).unwrap().epr(&rho).unwrap();
        prop_assert!(e.local >= -1e-8 && e.nonlocal >= -1e-8);
    }

    #[test]
    fn stable_entropy_production_is_nonnegative(params in proptest::collection::vec(component(), 1..3), alpha in 0.6f64..1.9) {
        let spec = builtin::example2_spec(alpha);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-10.0, 10.0, 201).unwrap();
        let rho = mixture(&grid, &params);
        let band = BandConfig { cells: 2, model: BandModel::Taylor };
        let disc = Discretization::new(&spec, &k, &grid, band).unwrap();
        let e = ThermoEvaluator::new(&disc, None).unwrap().epr(&rho).unwrap();
        prop_assert!(e.nonlocal >= -1e-8);
        prop_assert_eq!(e.local, 0.0);
    }

    #[test]
    fn nonlocal_current_is_antisymmetric(params in proptest::collection::vec(component(), 1..3), tilt in -1.0f64..1.0) {
        let spec = tilted_jump_spec(tilt);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-6.0, 6.0, 61).unwrap();
        let rho = mixture(&grid, &params);
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        let c = currents(&disc, &rho).unwrap();
        let n = grid.len();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(c.nonlocal[i * n + j], -c.nonlocal[j * n + i]);
            }
        }
    }

    #[test]
    fn asymmetry_matrix_is_antisymmetric(params in proptest::collection::vec(component(), 1..3), tilt in -1.0f64..1.0) {
        let spec = tilted_jump_spec(tilt);
        let k = build_jump_kernel(&spec).unwrap();
        let grid = Grid::new_1d(-8.0, 8.0, 161).unwrap();
        let rho = mixture(&grid, &params);
        let disc = Discretization::new(&spec, &k, &grid, BandConfig::default()).unwrap();
        let m = generator_asymmetry_matrix(&disc, &rho, &default_battery(1));
        let n = m.labels.len();
        for a in 0..n {
            prop_assert_eq!(m.values[a * n + a], 0.0);
            for b in 0..n {
                prop_assert_eq!(m.values[a * n + b], -m.values[b * n + a]);
            }
        }
    }

    #[test]
    fn log_mean_lies_between_geometric_and_arithmetic(a in 1e-6f64..10.0, b in 1e-6f64..10.0) {
        let l = log_mean(a, b);
        prop_assert_eq!(l, log_mean(b, a));
        prop_assert!(l >= (a * b).sqrt() * (1.0 - 1e-12));
        prop_assert!(l <= 0.5 * (a + b) * (1.0 + 1e-12));
    }

    #[test]
    fn paths_are_reproducible(seed in 0u64..10_000) {
        let spec = builtin::example1_spec();
        let a = simulate_path(&spec, &[0.5], 0.5, 0.01, seed).unwrap();
        let b = simulate_path(&spec, &[0.5], 0.5, 0.01, seed).unwrap();
        prop_assert_eq!(a.states, b.states);
    }
}
