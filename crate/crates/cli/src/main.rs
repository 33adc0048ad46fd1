use std::path::PathBuf;
use std::process::ExitCode;

use arock::harness::{cli_run, CliOptions};
use arock::RunMode;
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sim,
    Concurrent,
}

/// Run an asynchronous block-coordinate fixed-point experiment.
#[derive(Debug, Parser)]
#[command(name = "arock", version)]
struct Args {
    /// Experiment file (`key = value` lines).
    #[arg(long, value_name = "PATH", required_unless_present = "table2")]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.mode`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Trace CSV destination; overrides `out.trace_path`.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Verify the descent inequality at every simulated step.
    #[arg(long)]
    check_descent: bool,
    /// Print the step-size table and exit.
    #[arg(long)]
    table2: bool,
    /// Number of blocks for --table2.
    #[arg(long, requires = "table2")]
    m: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let opts = CliOptions {
        config: args.config,
        seed: args.seed,
        mode: args.mode.map(|m| match m {
            Mode::Sim => RunMode::Simulated,
            Mode::Concurrent => RunMode::Concurrent,
        }),
        out: args.out,
        check_descent: args.check_descent,
        table2: args.table2,
        m: args.m,
    };
    let code = cli_run(&opts, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
