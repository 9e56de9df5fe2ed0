//! Trace CSVs and atomic file writes.
//!
//! Trace columns, in order: `t, bits_cum, opt_err, cons_err, gt_err,
//! comp_x_err, comp_y_err, residual, accuracy`. Floats use Rust's shortest
//! round-trip scientific form; `accuracy` is empty when there is no test set.
//! Compare CSVs prepend `variant, mode, scheme`.

use std::fs;
use std::io::Write;
use std::path::Path;

use cnext::solver::{Trace, TraceRecord};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const TRACE_COLUMNS: [&str; 9] = [
    "t",
    "bits_cum",
    "opt_err",
    "cons_err",
    "gt_err",
    "comp_x_err",
    "comp_y_err",
    "residual",
    "accuracy",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn record_fields(r: &TraceRecord) -> Vec<String> {
    let mut out = vec![r.t.to_string(), r.bits_cum.to_string()];
    out.extend(r.errors.to_array().into_iter().map(fmt));
    out.push(fmt(r.residual));
    out.push(r.accuracy.map(fmt).unwrap_or_default());
    out
}

pub fn trace_csv(trace: &Trace) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(TRACE_COLUMNS).expect("in-memory write");
    for r in &trace.records {
        w.write_record(record_fields(r)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// One labelled trace of a comparison.
pub struct CompareRow<'a> {
    pub variant: &'a str,
    pub mode: &'a str,
    pub scheme: &'a str,
    pub trace: &'a Trace,
}

pub fn compare_csv(rows: &[CompareRow<'_>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(vec![]);
    let header: Vec<&str> = ["variant", "mode", "scheme"]
        .into_iter()
        .chain(TRACE_COLUMNS)
        .collect();
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        for r in &row.trace.records {
            let mut fields = vec![row.variant.to_owned(), row.mode.to_owned(), row.scheme.to_owned()];
            fields.extend(record_fields(r));
            w.write_record(&fields).expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}
