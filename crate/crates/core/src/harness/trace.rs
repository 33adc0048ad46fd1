use std::io::Write;
use std::path::Path;

use crate::engine::Trace;
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 7] = ["k", "i_k", "j_k", "eta_k", "fpr_norm", "dist_to_sol", "xi"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes the trace as CSV: header, one row per recorded step, then a
/// `#summary` line. Empty cells mean "not available".
pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.rows {
        w.write_record([
            r.k.to_string(),
            r.block.map(|i| i.to_string()).unwrap_or_default(),
            r.delay.to_string(),
            r.eta.to_string(),
            r.fpr.to_string(),
            opt(r.dist),
            opt(r.xi),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "#summary".to_string(),
        format!("final_fpr={}", trace.final_fpr),
        format!("wall_time_s={}", opt(trace.wall_time.map(|d| d.as_secs_f64()))),
        format!("updates={}", trace.updates),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

/// [`write_trace`] into a file, creating parent directories.
pub fn emit_trace(trace: &Trace, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}
