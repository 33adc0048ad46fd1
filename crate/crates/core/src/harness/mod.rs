//! Config files, trace output and the command-line driver.

pub mod config;
pub mod table2;
pub mod trace;

use std::io::Write;
use std::path::PathBuf;

pub use config::ExperimentConfig;
pub use table2::{table2_report, table2_rows, timing_delay_model, Table2Row};
pub use trace::{emit_trace, write_trace, TRACE_HEADER};

use crate::engine::{self, RunMode};
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DESCENT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

pub const TABLE2_TAUS: [usize; 5] = [0, 1, 2, 4, 8];
pub const TABLE2_RS: [f64; 3] = [0.25, 0.5, 0.9];

#[derive(Debug, Clone, Default)]
pub struct CliOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mode: Option<RunMode>,
    pub out: Option<PathBuf>,
    pub check_descent: bool,
    pub table2: bool,
    pub m: Option<usize>,
}

pub const DEFAULT_TABLE2_M: usize = 100;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DescentViolated { .. } => EXIT_DESCENT,
        Error::DivergenceDetected { .. } => EXIT_DIVERGENCE,
        Error::WindowExceeded { .. }
        | Error::WorkerPanic(_)
        | Error::NonFinite(_)
        | Error::MaxIterationsExceeded { .. }
        | Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

/// Runs the command line described by `opts`; returns the exit status.
pub fn cli_run(opts: &CliOptions, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    if opts.table2 {
        let m = opts.m.unwrap_or(DEFAULT_TABLE2_M);
        return match table2_report(m, &TABLE2_TAUS, &TABLE2_RS) {
            Ok(text) => {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            }
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                exit_code(&e)
            }
        };
    }
    let Some(path) = &opts.config else {
        let _ = writeln!(stderr, "error: --config is required unless --table2 is given");
        return EXIT_CONFIG;
    };
    let fail = |stderr: &mut dyn Write, e: &Error| {
        let _ = writeln!(stderr, "error: {e}");
        exit_code(e)
    };
    let exp = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(stderr, &e),
    };
    let mut cfg = match exp.build() {
        Ok(c) => c,
        Err(e) => return fail(stderr, &e),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.mode = mode;
    }
    if opts.check_descent {
        if cfg.mode == RunMode::Concurrent {
            let _ = writeln!(stderr, "warning: --check-descent is ignored in concurrent mode");
        } else {
            cfg.check_descent = true;
        }
    }
    let out = opts.out.clone().or_else(|| exp.trace_destination());

    let (trace, error) = match engine::run(&cfg) {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    if let Some(out) = &out {
        if let Err(e) = emit_trace(&trace, out) {
            let _ = writeln!(stderr, "error: writing {}: {e}", out.display());
            return error.as_ref().map_or(EXIT_FAILURE, exit_code);
        }
    }
    let wall = trace
        .wall_time
        .map_or_else(|| "n/a".to_string(), |d| format!("{:.3}s", d.as_secs_f64()));
    let _ = writeln!(
        stderr,
        "updates={} final_fpr={:e} max_delay={} wall_time={wall}",
        trace.updates, trace.final_fpr, trace.stats.max_delay
    );
    match error {
        None => EXIT_OK,
        Some(e) => fail(stderr, &e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::DivergenceDetected { k: 1, norm: 1e13 }), EXIT_DIVERGENCE);
        let v = Error::DescentViolated { k: 0, delay: vec![1], eta: 1.0, slack: -1.0 };
        assert_eq!(exit_code(&v), EXIT_DESCENT);
        assert_eq!(exit_code(&Error::WorkerPanic("boom".into())), EXIT_FAILURE);
    }

    #[test]
    fn missing_config_flag() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(cli_run(&CliOptions::default(), &mut out, &mut err), EXIT_CONFIG);
        assert!(String::from_utf8(err).unwrap().contains("--config"));
    }
}
