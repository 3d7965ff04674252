//! CSV artifacts and the run report. Nothing is written until a task has
//! finished, and every file goes through a temporary file and a rename.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// A CSV table held in memory until the run succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &[&str]) -> Self {
        Self { file: file.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| CliError::Runtime(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

/// Shortest round-trip representation, with an exponent for very small or
/// large magnitudes.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a CSV written by [`Table::to_bytes`] back into a header and numeric
/// columns; non-numeric cells become NaN.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let header = r.headers().map_err(|e| CliError::Runtime(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(rec.iter().map(|c| c.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value >= threshold }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub task: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub passed: bool,
    pub results: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn summary_line(&self) -> String {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        if failed.is_empty() {
            format!("{} [{}]: ok ({} checks)", self.name, self.task, self.checks.len())
        } else {
            format!("{} [{}]: FAILED {}", self.name, self.task, failed.join(", "))
        }
    }
}

fn write_atomic(dir: &Path, file: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(file);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(target)
}

/// Writes the tables and the report into `dir`.
pub fn write_all(dir: &Path, tables: &[Table], report: &mut RunReport, report_file: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    // serialize everything first so a formatting error leaves no files
    let encoded: Vec<(String, Vec<u8>)> =
        tables.iter().map(|t| Ok((t.file.clone(), t.to_bytes()?))).collect::<Result<_, CliError>>()?;
    report.artifacts = encoded.iter().map(|(f, _)| f.clone()).collect();
    report.artifacts.push(report_file.to_string());
    let mut json = serde_json::to_vec_pretty(report).map_err(|e| CliError::Runtime(e.to_string()))?;
    json.push(b'\n');
    for (file, bytes) in &encoded {
        write_atomic(dir, file, bytes)?;
    }
    write_atomic(dir, report_file, &json)?;
    Ok(())
}
