use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use etcsim_cli::commands::{self, AdviseArgs};
use etcsim_cli::config::Overrides;
use etcsim_cli::{sweep, CliError};

/// Event-triggered adaptive output-feedback control simulator.
///
/// Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
#[derive(Parser)]
#[command(name = "etcsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the base step `[sim].h`.
    #[arg(long)]
    h: Option<f64>,
    /// Override the horizon `[sim].t_end`.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            h: self.h,
            t_end: self.t_end,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop; writes trajectory.csv, events.csv, summary.json.
    Simulate(RunArgs),
    /// Check a parameter set against the design inequalities; writes advisor.json.
    Advise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Invariant-set level; defaults to `[analysis].q`.
        #[arg(long)]
        q: Option<f64>,
        /// Non-negative slack added to eta_0.
        #[arg(long = "c-delta", default_value_t = 0.0)]
        c_delta: f64,
        /// Multiplier (> 1) in the suggested leakage gain.
        #[arg(long = "c-small-delta", default_value_t = 2.0)]
        c_small_delta: f64,
        /// Target for every c_bar_i; defaults to d_bar / q.
        #[arg(long = "c-bar")]
        c_bar: Option<f64>,
    },
    /// Run the second-order example against the full-state baseline; writes comparison.json.
    CompareBaseline(RunArgs),
    /// Run one simulation per grid point; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Grid specification (TOML with [[axis]] tables).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Recompute summary.json of a simulate output directory from its CSVs.
    Replay {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let doc = commands::simulate(&a.config, &a.out, &a.overrides())?;
            let s = &doc.summary;
            println!(
                "ED1 {}  ED2 {}  sup|y| on [{}, {}] = {:.6}",
                s.ed1_count, s.ed2_count, doc.meta.tail_start, doc.meta.t_end, s.tail_sup_y
            );
        }
        Command::Advise {
            config,
            out,
            q,
            c_delta,
            c_small_delta,
            c_bar,
        } => {
            let report = commands::advise(&AdviseArgs {
                config,
                out,
                q,
                c_delta,
                c_small_delta,
                c_bar_target: c_bar,
            })?;
            for c in &report.constraint_results {
                let mark = if c.satisfied { "ok  " } else { "FAIL" };
                println!("{mark} {:?} {} (margin {:.6})", c.kind, c.name, c.margin);
            }
        }
        Command::CompareBaseline(a) => {
            let c = commands::compare_baseline(&a.config, &a.out, &a.overrides())?;
            println!(
                "ours: c2p {} p2c {} sup|y| {:.6}; baseline: c2p {} p2c {} sup|y| {:.6}",
                c.ours.c2p, c.ours.p2c, c.ours.tail_sup_y, c.baseline.c2p, c.baseline.p2c, c.baseline.tail_sup_y
            );
        }
        Command::Sweep { run, spec } => {
            let rows = sweep::sweep(&run.config, &spec, &run.out, &run.overrides())?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} grid points, {failed} not ok", rows.len());
        }
        Command::Replay { out } => {
            let s = commands::replay(&out)?;
            println!("summary reproduced: ED1 {} ED2 {}", s.ed1_count, s.ed2_count);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
