//! Batch front end for the telegraph library: experiment configurations,
//! task dispatch and CSV artifacts.

pub mod catalog;
pub mod config;
pub mod error;
pub mod output;
pub mod tasks;

use std::path::Path;
use std::time::Instant;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use output::RunReport;

/// Reads a configuration from disk, falling back to the bundled catalog when
/// no such file exists.
pub fn load_text(path: &str) -> Result<String, CliError> {
    let p = Path::new(path);
    if p.exists() {
        return std::fs::read_to_string(p).map_err(|e| CliError::Parse(format!("{path}: {e}")));
    }
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or(path);
    catalog::bundled(name)
        .map(str::to_string)
        .ok_or_else(|| CliError::Parse(format!("{path}: no such file or bundled experiment")))
}

/// Runs one experiment and writes its artifacts into `out_dir`. The report
/// is returned even when tolerance checks fail; `passed` says which.
pub fn execute(
    path: &str,
    overrides: &[String],
    seed: Option<u64>,
    out_dir: &Path,
    expected_kind: Option<&str>,
) -> Result<RunReport, CliError> {
    let text = load_text(path)?;
    let cfg = config::parse(&text, overrides, seed)?;
    if let Some(kind) = expected_kind {
        if cfg.task.kind() != kind {
            return Err(CliError::Validation(format!("`{path}` describes a `{}` task, not `{kind}`", cfg.task.kind())));
        }
    }
    let model = cfg.model.build()?;
    let prefix = cfg.output.prefix.clone().unwrap_or_else(|| cfg.name.clone());
    if prefix.is_empty() || prefix.contains(['/', '\\']) {
        return Err(CliError::Validation(format!("output prefix `{prefix}` must be a plain file name")));
    }
    let start = Instant::now();
    let out = tasks::run(&cfg.task, &model, &prefix)?;
    let mut report = RunReport {
        name: cfg.name.clone(),
        task: cfg.task.kind().to_string(),
        seed: cfg.task.seed(),
        wall_time_s: start.elapsed().as_secs_f64(),
        passed: out.checks.iter().all(|c| c.passed),
        results: out.results,
        checks: out.checks,
        artifacts: Vec::new(),
    };
    output::write_all(out_dir, &out.tables, &mut report, &format!("{prefix}_report.json"))?;
    Ok(report)
}
