//! Small shared helpers: CSV reading/writing and checked trace loading.

use std::path::Path;

use nascty_core::trace_model::TraceSet;
use nascty_core::trace_store;

use crate::error::{CliError, CliResult};

/// Minimal CSV: comma-separated, first row is the header, no quoting
/// (none of our fields contain commas).
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty CSV", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(CliError::Data(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn parse_f64(path: &Path, field: &str, value: &str) -> CliResult<f64> {
    value.parse().map_err(|_| {
        CliError::Data(format!("{}: cannot parse {field} value `{value}`", path.display()))
    })
}

pub fn load_traceset(path: &Path) -> CliResult<TraceSet> {
    trace_store::read_traceset(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads a profiling split and checks the evolution preconditions: flat
/// per-class histogram and normalized samples.
pub fn load_profiling_split(path: &Path, role: &str) -> CliResult<TraceSet> {
    let ts = load_traceset(path)?;
    if !ts.is_normalized() {
        return Err(CliError::Validation(format!(
            "{role} split {} is not normalized; regenerate it with gen-traces",
            path.display()
        )));
    }
    let hist = ts.label_histogram();
    let first = hist[0];
    if first == 0 || hist.iter().any(|&c| c != first) {
        return Err(CliError::Validation(format!(
            "{role} split {} is not class-balanced; regenerate it with gen-traces",
            path.display()
        )));
    }
    Ok(ts)
}

pub fn ensure_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}
