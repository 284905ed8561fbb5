mod args;
mod commands;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use commands::{CheckFailed, Usage};

fn run(cli: &Cli) -> anyhow::Result<serde_json::Value> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    std::fs::create_dir_all(&c.out)?;
    let v = match &cli.command {
        Command::Simulate {
            spec,
            dt,
            t_final,
            paths,
            x0,
            density,
        } => commands::simulate(c, spec, *dt, *t_final, *paths, x0, density.as_ref())?,
        Command::SolveFpe {
            spec,
            grid,
            dt,
            t_final,
            interval,
            density,
            init_mean,
            init_std,
        } => commands::solve_fpe(c, spec, grid, *dt, *t_final, *interval, density.as_ref(), *init_mean, *init_std)?,
        Command::Epr {
            spec,
            density,
            band_cells,
        } => commands::epr(c, spec, density, *band_cells)?,
        Command::CheckReversibility {
            spec,
            density,
            grid,
            t_final,
            band_cells,
        } => commands::check_reversibility(c, spec, density.as_ref(), grid, *t_final, *band_cells)?,
        Command::ReversalKl {
            spec,
            density,
            paths,
            t_final,
            dt,
            delta_small,
        } => commands::reversal_kl(c, spec, density, *paths, *t_final, *dt, *delta_small)?,
        Command::Example1 { grid, dt, t_final } => commands::example1(c, grid, *dt, *t_final)?,
        Command::Example2 {
            alpha,
            grid,
            paths,
            t_final,
            dt,
        } => commands::example2(c, alpha, grid, *paths, *t_final, *dt)?,
    };
    commands::write_manifest(&c.out, cli.command.name(), &serde_json::to_value(cli)?)?;
    Ok(v)
}

fn exit_code(e: &anyhow::Error) -> (u8, &'static str) {
    if e.downcast_ref::<Usage>().is_some() {
        return (2, "usage");
    }
    if e.downcast_ref::<CheckFailed>().is_some() {
        return (1, "check_failed");
    }
    if let Some(core) = e.chain().find_map(|c| c.downcast_ref::<jumpepr_core::Error>()) {
        return (if core.is_usage() { 2 } else { 1 }, core.kind());
    }
    (1, "runtime")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(v) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (code, kind) = exit_code(&e);
            let msg = json!({"error": kind, "message": format!("{e:#}")});
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
