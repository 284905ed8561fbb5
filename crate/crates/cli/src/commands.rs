use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use jumpepr_core::builtin::{self, Builtin};
use jumpepr_core::fokker_planck::{solve_fpe_with, FpeConfig};
use jumpepr_core::girsanov::{estimate_epr_kl_streaming, KlConfig, KlEstimate};
use jumpepr_core::grid::fmt17;
use jumpepr_core::model::build_jump_kernel;
use jumpepr_core::reversibility::full_report_banded;
use jumpepr_core::simulate::{simulate_ensemble, Initial};
use jumpepr_core::thermo::{decompose_forces_1d, series_from_snapshots, ThermoEvaluator, ThermoSeries};
use jumpepr_core::{
    BandConfig, DensityField, Discretization, ForceDecomposition, Grid, JumpKernel, ProcessSpec, Thresholds,
};

use crate::args::{Common, Format, GridArgs};

/// A post-run check that did not hold.
#[derive(Debug)]
pub struct CheckFailed(pub Vec<String>);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "checks failed: {}", self.0.join("; "))
    }
}

impl std::error::Error for CheckFailed {}

/// Bad command-line input detected after parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub struct Loaded {
    pub spec: ProcessSpec,
    pub kernel: JumpKernel,
    pub builtin: Option<Builtin>,
}

/// A spec file, or `builtin:<name>[:alpha]`.
pub fn load_spec(arg: &str) -> Result<Loaded> {
    if let Some(rest) = arg.strip_prefix("builtin:") {
        let mut parts = rest.splitn(2, ':');
        let name = parts.next().unwrap_or_default();
        let alpha = match parts.next() {
            Some(a) => a.parse::<f64>().map_err(|_| Usage(format!("bad alpha in `{arg}`")))?,
            None => 1.5,
        };
        let b = builtin::by_name(name, alpha).ok_or_else(|| Usage(format!("unknown built-in `{name}`")))??;
        return Ok(Loaded {
            spec: b.spec.clone(),
            kernel: b.kernel.clone(),
            builtin: Some(b),
        });
    }
    let spec = ProcessSpec::load(arg).with_context(|| format!("loading spec `{arg}`"))?;
    let kernel = build_jump_kernel(&spec)?;
    Ok(Loaded {
        spec,
        kernel,
        builtin: None,
    })
}

fn make_grid(dim: usize, g: &GridArgs, lo: f64, hi: f64, n1: usize, n2: usize) -> Result<Grid> {
    let lo = g.grid_min.unwrap_or(lo);
    let hi = g.grid_max.unwrap_or(hi);
    let n = g.grid_points.unwrap_or(if dim == 1 { n1 } else { n2 });
    if !(lo < hi) || n < 3 {
        bail!(Usage(format!("invalid grid [{lo}, {hi}] with {n} points")));
    }
    Ok(Grid::cube(dim, lo, hi, n)?)
}

fn gaussian(grid: Grid, mean: f64, std: f64) -> Result<DensityField> {
    Ok(DensityField::from_fn(grid, 0.0, |x| {
        x.iter().map(|v| (-0.5 * ((v - mean) / std).powi(2)).exp()).product()
    })?)
}

fn decomposition_for(spec: &ProcessSpec) -> ForceDecomposition {
    if spec.dim == 1 {
        if let Ok(d) = decompose_forces_1d(spec, 0.0) {
            return d;
        }
    }
    let drift = spec.drift.clone();
    ForceDecomposition::gradient(spec.dim, |_| 0.0).with_local_external(move |x, out| drift.eval(x, out))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn write_series(dir: &Path, stem: &str, s: &ThermoSeries, format: Format) -> Result<()> {
    match format {
        Format::Csv => s.save_csv(dir.join(format!("{stem}.csv")))?,
        Format::Json => {
            let mut f = File::create(dir.join(format!("{stem}.json")))?;
            writeln!(f, "{}", s.to_json()?)?;
        }
    }
    Ok(())
}

/// Columns `x, t=...` for every `stride`-th snapshot (1D only).
fn write_density_evolution(path: &Path, snaps: &[DensityField], stride: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let chosen: Vec<&DensityField> = snaps.iter().step_by(stride.max(1)).collect();
    write!(w, "x")?;
    for s in &chosen {
        write!(w, ",t={}", fmt17(s.time))?;
    }
    writeln!(w)?;
    let nodes = chosen[0].grid.axis(0).nodes();
    for (i, x) in nodes.iter().enumerate() {
        write!(w, "{}", fmt17(*x))?;
        for s in &chosen {
            write!(w, ",{}", fmt17(s.values[i]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn epr_json(e: &jumpepr_core::thermo::EprResult) -> Value {
    json!({
        "ep_local": e.local,
        "ep_nonlocal": e.nonlocal,
        "ep_total": e.total,
        "skipped_mass": e.skipped_mass,
    })
}

fn kl_json(k: &KlEstimate) -> Value {
    json!({
        "epr": k.epr,
        "standard_error": k.standard_error,
        "discard_fraction": k.discard_fraction,
        "retained": k.retained,
        "discarded": k.discarded,
        "t_final": k.t_final,
        "dt": k.dt,
    })
}

pub fn simulate(
    common: &Common,
    spec: &str,
    dt: f64,
    t_final: f64,
    paths: usize,
    x0: &[f64],
    density: Option<&PathBuf>,
) -> Result<Value> {
    let l = load_spec(spec)?;
    let initial = match density {
        Some(p) => Initial::Density(DensityField::load_csv(p, 0.0)?.sampler()?),
        None if x0.is_empty() => Initial::Point(vec![0.0; l.spec.dim]),
        None if x0.len() == l.spec.dim => Initial::Point(x0.to_vec()),
        None => bail!(Usage(format!("--x0 needs {} coordinates", l.spec.dim))),
    };
    let e = simulate_ensemble(&l.spec, &initial, t_final, dt, paths, common.seed)?;
    e.export(common.out.join("paths"))?;
    let jumps: usize = e.paths.iter().map(|p| p.jumps.len()).sum();
    Ok(json!({"paths": e.paths.len(), "jumps": jumps, "spec_fingerprint": e.spec_fingerprint}))
}

#[allow(clippy::too_many_arguments)]
pub fn solve_fpe(
    common: &Common,
    spec: &str,
    grid: &GridArgs,
    dt: Option<f64>,
    t_final: f64,
    interval: f64,
    density: Option<&PathBuf>,
    mean: f64,
    std: f64,
) -> Result<Value> {
    let l = load_spec(spec)?;
    let rho0 = match density {
        Some(p) => DensityField::load_csv(p, 0.0)?,
        None => gaussian(make_grid(l.spec.dim, grid, -8.0, 8.0, 321, 65)?, mean, std)?,
    };
    let band = l.builtin.as_ref().map(|b| b.band).unwrap_or_default();
    let disc = Discretization::new(&l.spec, &l.kernel, &rho0.grid, band)?;
    let cfg = FpeConfig {
        dt,
        band,
        ..FpeConfig::new(t_final, interval)
    };
    let run = solve_fpe_with(&disc, &rho0, &cfg)?;
    run.export(common.out.join("fpe"))?;
    let dec = decomposition_for(&l.spec);
    let series = series_from_snapshots(&disc, &dec, &run.snapshots)?;
    write_series(&common.out, "thermo_series", &series, common.format)?;
    Ok(json!({
        "steps": run.steps,
        "dt": run.dt,
        "stability_bound": run.stability_bound,
        "mass_drift_per_1000_steps": run.mass_drift_per_1000_steps(),
        "epr_final": series.epr_total.last(),
    }))
}

pub fn epr(common: &Common, spec: &str, density: &Path, band_cells: usize) -> Result<Value> {
    let l = load_spec(spec)?;
    let field = DensityField::load_csv(density, 0.0)?;
    let band = BandConfig {
        cells: band_cells,
        ..Default::default()
    };
    let disc = Discretization::new(&l.spec, &l.kernel, &field.grid, band)?;
    let e = ThermoEvaluator::new(&disc, None)?.epr(&field)?;
    let v = epr_json(&e);
    write_json(&common.out.join("epr.json"), &v)?;
    Ok(v)
}

fn relaxed_density(l: &Loaded, grid: &GridArgs, t_final: f64, band: BandConfig) -> Result<DensityField> {
    let g = make_grid(l.spec.dim, grid, -8.0, 8.0, 321, 65)?;
    let rho0 = gaussian(g, 0.0, 1.0)?;
    let disc = Discretization::new(&l.spec, &l.kernel, &rho0.grid, band)?;
    let cfg = FpeConfig {
        band,
        ..FpeConfig::new(t_final, t_final)
    };
    let run = solve_fpe_with(&disc, &rho0, &cfg)?;
    Ok(run.snapshots.last().expect("at least one snapshot").clone())
}

pub fn check_reversibility(
    common: &Common,
    spec: &str,
    density: Option<&PathBuf>,
    grid: &GridArgs,
    t_final: f64,
    band_cells: usize,
) -> Result<Value> {
    let l = load_spec(spec)?;
    let mut band = BandConfig {
        cells: band_cells,
        ..Default::default()
    };
    let rho = match (density, &l.builtin) {
        (Some(p), _) => DensityField::load_csv(p, 0.0)?,
        (None, Some(b)) => {
            band = b.band;
            b.stationary.clone()
        }
        (None, None) => relaxed_density(&l, grid, t_final, band)?,
    };
    let report = full_report_banded(&l.spec, &l.kernel, &rho, &Thresholds::default(), band)?;
    write_json(&common.out.join("reversibility_report.json"), &report)?;
    Ok(serde_json::to_value(&report)?)
}

pub fn reversal_kl(
    common: &Common,
    spec: &str,
    density: &Path,
    paths: usize,
    t_final: f64,
    dt: f64,
    delta_small: f64,
) -> Result<Value> {
    let l = load_spec(spec)?;
    let rho = DensityField::load_csv(density, 0.0)?;
    let cfg = KlConfig {
        paths,
        t_final,
        dt,
        seed: common.seed,
        delta_small,
    };
    let k = estimate_epr_kl_streaming(&l.spec, &l.kernel, &rho, &cfg)?;
    k.save_csv(common.out.join("log_rn_per_path.csv"))?;
    let v = kl_json(&k);
    write_json(&common.out.join("kl_estimate.json"), &v)?;
    Ok(v)
}

pub fn example1(common: &Common, grid: &GridArgs, dt: Option<f64>, t_final: f64) -> Result<Value> {
    let b = builtin::example1_on(make_grid(1, grid, -8.0, 8.0, 641, 641)?).context("stage: setup")?;
    let rho0 = gaussian(b.grid().clone(), 3.0, 1.0)?;
    let disc = Discretization::new(&b.spec, &b.kernel, b.grid(), b.band).context("stage: discretization")?;
    let cfg = FpeConfig {
        dt,
        ..FpeConfig::new(t_final, 0.01)
    };
    let run = solve_fpe_with(&disc, &rho0, &cfg).context("stage: fokker-planck")?;
    let dec = ForceDecomposition::gradient(1, |x| 0.5 * x[0] * x[0]);
    let series = series_from_snapshots(&disc, &dec, &run.snapshots).context("stage: thermodynamics")?;
    let report = full_report_banded(&b.spec, &b.kernel, &b.stationary, &Thresholds::default(), b.band)
        .context("stage: reversibility")?;

    let out = &common.out;
    write_density_evolution(&out.join("density_evolution.csv"), &run.snapshots, 10)?;
    let last = run.snapshots.last().expect("snapshots");
    last.save_csv(out.join("rho_final.csv"))?;
    write_series(out, "thermo_series", &series, common.format)?;
    write_json(&out.join("reversibility_report.json"), &report)?;

    let epr = &series.epr_total;
    let l1 = last.l1_distance(&b.stationary.values);
    let ripple = series
        .times
        .windows(2)
        .zip(epr.windows(2))
        .filter(|(t, _)| t[0] >= 1.0 - 1e-12)
        .map(|(_, e)| e[1] - e[0])
        .fold(0.0f64, f64::max);
    let min_epr = epr.iter().copied().fold(f64::INFINITY, f64::min);
    let epr_final = *epr.last().expect("series");
    let mut failed = Vec::new();
    if !(epr_final < 1e-3) {
        failed.push(format!("EPR(T) = {epr_final:e} is not below 1e-3"));
    }
    if !(l1 < 0.02) {
        failed.push(format!("final L1 distance {l1:e} is not below 0.02"));
    }
    if !(ripple <= 1e-4) {
        failed.push(format!("EPR increases by {ripple:e} after t = 1"));
    }
    let summary = json!({
        "epr0_local": series.epr_local[0],
        "epr0_nonlocal": series.epr_nonlocal[0],
        "epr0_total": series.epr_total[0],
        "epr_final": epr_final,
        "min_epr": min_epr,
        "max_ripple_after_t1": ripple,
        "l1_final": l1,
        "dt": run.dt,
        "steps": run.steps,
        "mass_drift_per_1000_steps": run.mass_drift_per_1000_steps(),
        "verdict_consistent": report.verdict_consistent,
        "reversible": report.reversible,
        "checks_passed": failed.is_empty(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    if !failed.is_empty() {
        bail!(CheckFailed(failed));
    }
    Ok(summary)
}

pub fn example2(common: &Common, alphas: &[f64], grid: &GridArgs, paths: usize, t_final: f64, dt: f64) -> Result<Value> {
    let out = &common.out;
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha < 2.0) {
            bail!(Usage(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        let tag = format!("alpha{alpha}");
        let g = make_grid(1, grid, -40.0, 40.0, 1601, 1601)?;
        let (lo, hi, n) = (g.axis(0).lower, g.axis(0).upper, g.len());
        let b = builtin::example2_on(alpha, g).context("stage: stationary density")?;
        b.stationary.save_csv(out.join(format!("rho_ss_{tag}.csv")))?;

        let steady = |b: &Builtin, band: BandConfig| -> Result<f64> {
            let disc = Discretization::new(&b.spec, &b.kernel, b.grid(), band)?;
            Ok(ThermoEvaluator::new(&disc, None)?.epr(&b.stationary)?.total)
        };
        let value = steady(&b, b.band).context("stage: steady EPR")?;
        let fine = builtin::example2_on(alpha, Grid::new_1d(lo, hi, 2 * n - 1)?)?;
        let refined = steady(
            &fine,
            BandConfig {
                cells: 2 * b.band.cells,
                ..b.band
            },
        )
        .context("stage: refined EPR")?;
        let narrow = steady(
            &b,
            BandConfig {
                cells: (b.band.cells / 2).max(1),
                ..b.band
            },
        )
        .context("stage: narrow-band EPR")?;
        let error_bar = (refined - value).abs().max((narrow - value).abs());
        if !(value - 3.0 * error_bar > 0.0) {
            failed.push(format!("alpha = {alpha}: EPR {value} not positive beyond 3 error bars ({error_bar})"));
        }

        let disc = Discretization::new(&b.spec, &b.kernel, b.grid(), b.band)?;
        let rho0 = gaussian(b.grid().clone(), 0.0, 1.0)?;
        let run = solve_fpe_with(
            &disc,
            &rho0,
            &FpeConfig {
                band: b.band,
                ..FpeConfig::new(t_final, 0.1)
            },
        )
        .context("stage: fokker-planck")?;
        let ev = ThermoEvaluator::new(&disc, None)?;
        let mut w = BufWriter::new(File::create(out.join(format!("epr_series_{tag}.csv")))?);
        writeln!(w, "t,ep_local,ep_nonlocal,ep_total")?;
        for s in &run.snapshots {
            let e = ev.epr(s)?;
            writeln!(w, "{},{},{},{}", fmt17(s.time), fmt17(e.local), fmt17(e.nonlocal), fmt17(e.total))?;
        }
        w.flush()?;

        let report = full_report_banded(&b.spec, &b.kernel, &b.stationary, &Thresholds::default(), b.band)
            .context("stage: reversibility")?;
        write_json(&out.join(format!("reversibility_report_{tag}.json")), &report)?;

        let girsanov = if paths > 0 {
            let wide = builtin::example2_on(alpha, Grid::new_1d(-200.0, 200.0, 8001)?)?;
            let cfg = KlConfig {
                paths,
                t_final,
                dt,
                seed: common.seed,
                delta_small: 0.0,
            };
            let k = estimate_epr_kl_streaming(&wide.spec, &wide.kernel, &wide.stationary, &cfg)
                .context("stage: girsanov")?;
            k.save_csv(out.join(format!("log_rn_per_path_{tag}.csv")))?;
            let agrees = (k.epr - value).abs() < 3.0 * k.standard_error + 0.05 * value;
            if !agrees && (alpha - 1.5).abs() < 1e-12 {
                failed.push(format!(
                    "alpha = {alpha}: path estimate {} ± {} disagrees with grid value {value}",
                    k.epr, k.standard_error
                ));
            }
            let mut v = kl_json(&k);
            v["agrees"] = json!(agrees);
            v
        } else {
            Value::Null
        };
        entries.push(json!({
            "alpha": alpha,
            "epr": value,
            "epr_refined_grid": refined,
            "epr_narrow_band": narrow,
            "error_bar": error_bar,
            "epr_transient_final": ev.epr(run.snapshots.last().expect("snapshots"))?.total,
            "verdict_consistent": report.verdict_consistent,
            "reversible": report.reversible,
            "girsanov": girsanov,
        }));
    }
    let summary = json!({"alphas": entries, "checks_passed": failed.is_empty()});
    write_json(&out.join("summary.json"), &summary)?;
    if !failed.is_empty() {
        bail!(CheckFailed(failed));
    }
    Ok(summary)
}

/// Hash every file under `out` into `run_manifest.json`.
pub fn write_manifest(out: &Path, command: &str, config: &Value) -> Result<()> {
    let mut files = Vec::new();
    collect(out, out, &mut files)?;
    files.sort();
    let entries: Vec<Value> = files
        .iter()
        .map(|rel| {
            let bytes = fs::read(out.join(rel))?;
            Ok(json!({
                "path": rel,
                "bytes": bytes.len(),
                "sha256": hex::encode(sha2::Sha256::digest(&bytes)),
            }))
        })
        .collect::<Result<_>>()?;
    let manifest = json!({
        "tool": "jumpepr",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "files": entries,
    });
    write_json(&out.join("run_manifest.json"), &manifest)
}

use sha2::Digest;

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "run_manifest.json") {
            let rel = p.strip_prefix(root).expect("under root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
