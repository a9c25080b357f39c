//! `lfd`: approximate least-favorable distributions and nearly optimal tests
//! by stochastic mirror descent.
//!
//! Exit codes: 0 on success, 1 for bad flags or configuration, 2 when the
//! computation or file output fails.

mod commands;
mod config;

use std::process::ExitCode;

use anyhow::{anyhow, bail};
use clap::{Args, Parser, Subcommand};

use commands::{CmdResult, Failure};
use config::{CommonArgs, EvalGridSpec, ExtraArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "lfd",
    version,
    about = "Least-favorable distributions by stochastic mirror descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver and write lambda, schedule, diagnostics and average-test files.
    Run(RunArgs),
    /// Compute the reference optimal power.
    Oracle(OracleArgs),
    /// Repeat seeded runs and count dual-gap failures (discrete problems).
    Concentration(ConcentrationArgs),
    /// Time the solver for several draws-per-epoch settings.
    Timing(TimingArgs),
    /// Check the problem and the configuration without running.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Keep per-epoch multipliers and grid bits (trace.csv, grid_bits.csv).
    #[arg(long)]
    trace: bool,
    /// Also compute the reference power and the dual gap.
    #[arg(long)]
    oracle: bool,
    /// Points at which to draw one randomized-epoch decision each.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    randomized_y: Option<Vec<f64>>,
    /// Evaluation grid as LO,HI,COUNT (Gaussian preset only).
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    eval_grid: Option<EvalGridSpec>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid points per axis for the multi-null grid oracle.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Debug, Args)]
struct ConcentrationArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Debug, Args)]
struct TimingArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated draws-per-epoch values.
    #[arg(long, value_delimiter = ',')]
    draw_counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn parse_grid(s: &str) -> anyhow::Result<EvalGridSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi, count] = parts.as_slice() else {
        bail!("expected LO,HI,COUNT, got {s:?}");
    };
    Ok(EvalGridSpec {
        lo: lo.parse()?,
        hi: hi.parse()?,
        count: count.parse()?,
    })
}

fn resolve(common: &CommonArgs, extra: ExtraArgs) -> CmdResult<RunConfig> {
    RunConfig::resolve(common, &extra).map_err(Failure::Usage)
}

fn execute(command: Command) -> CmdResult {
    match command {
        Command::Run(a) => {
            let extra = ExtraArgs {
                record_trace: a.trace,
                run_oracle: a.oracle,
                randomized_epoch_y: a.randomized_y,
                eval_grid: a.eval_grid,
                ..Default::default()
            };
            let cfg = resolve(&a.common, extra)?;
            let r = commands::cmd_run(&cfg)?;
            println!(
                "T = {}, eta = {}, f(kappa_bar) = {} (se {}), avg test size {} power {}",
                r.output.schedule.epochs,
                r.output.schedule.eta,
                r.f_value,
                r.f_std_error,
                r.avg_test.size(),
                r.avg_test.power
            );
            if let Some(v) = r.v_bar {
                println!("v_bar = {v}, gap = {}", r.f_value - v);
            }
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Oracle(a) => {
            let cfg = resolve(
                &a.common,
                ExtraArgs {
                    grid_points: a.grid_points,
                    ..Default::default()
                },
            )?;
            let sol = commands::cmd_oracle(&cfg)?;
            println!(
                "v_bar = {} ({}), certificate gap {}",
                sol.v_bar,
                sol.method_tag.as_str(),
                sol.certificate_gap()
            );
        }
        Command::Concentration(a) => {
            let cfg = resolve(
                &a.common,
                ExtraArgs {
                    runs: a.runs,
                    ..Default::default()
                },
            )?;
            let rep = commands::cmd_concentration(&cfg)?;
            println!(
                "{} of {} runs missed the target {} (rate {}, bound {})",
                rep.failure_count,
                rep.rows.len(),
                rep.target,
                rep.failure_rate(),
                rep.bound
            );
        }
        Command::Timing(a) => {
            let cfg = resolve(
                &a.common,
                ExtraArgs {
                    draw_counts: a.draw_counts,
                    ..Default::default()
                },
            )?;
            let rows = commands::cmd_timing(&cfg)?;
            for (n, s) in &rows {
                println!("N = {n}: {s:.3} s");
            }
            if rows.windows(2).any(|w| w[1].1 < w[0].1) {
                println!("note: timings are not monotone in N on this machine");
            }
        }
        Command::Validate(a) => {
            let cfg = resolve(&a.common, ExtraArgs::default())?;
            let v = commands::cmd_validate(&cfg)?;
            for w in &v.warnings {
                println!("warning: {w}");
            }
            for e in &v.errors {
                println!("error: {e}");
            }
            if !v.errors.is_empty() {
                return Err(Failure::Runtime(anyhow!(
                    "{} problem(s) found",
                    v.errors.len()
                )));
            }
            print!("{}", cfg.to_toml().map_err(Failure::Runtime)?);
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
