//! Experiment runner: dataset generation, variant grids, verification
//! suites, reports and epoch-time benchmarks.

pub mod bench;
pub mod config;
pub mod data_io;
pub mod error;
pub mod grid;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use pernode_core::analysis::report::{emit_report, ReportOptions, ReportOutcome};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::grid::{collect_records, run_grid, GridSummary};
use crate::verify::{all_passed, Check, Suite, Verifier};

fn out_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config("out_dir: pass --out or set out_dir in the config".into()))
}

/// Writes `features.csv` and `labels.csv` for the config's synthetic dataset.
pub fn cmd_gen_data(config: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult<PathBuf> {
    let mut cfg = ExperimentConfig::load(config)?;
    let dir = out_dir(&cfg, out)?;
    let spec = cfg
        .dataset
        .synthetic
        .as_mut()
        .ok_or_else(|| CliError::Config("dataset.synthetic: gen-data needs a synthetic dataset".into()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = pernode_core::data::generate(spec)?;
    data_io::write_dataset(&data, &dir)?;
    Ok(dir)
}

pub fn cmd_grid(config: &Path, out: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> CliResult<GridSummary> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let dir = out_dir(&cfg, out)?;
    let jobs = jobs.or(cfg.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::Config("--jobs: must be at least 1".into()));
    }
    run_grid(&cfg, &dir, jobs)
}

/// Runs the suite and prints one JSON object per check.
pub fn cmd_verify(
    suite: Suite,
    seed: u64,
    verifier: Option<&Verifier<'_>>,
    out: &mut dyn Write,
) -> CliResult<Vec<Check>> {
    let default = Verifier {
        seed,
        ..Verifier::default()
    };
    let checks = verifier.unwrap_or(&default).run(suite);
    for c in &checks {
        let line = serde_json::to_string(c).expect("check serializes");
        writeln!(out, "{line}").map_err(|e| CliError::io("<stdout>", e))?;
    }
    if !all_passed(&checks) {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.check.as_str()).collect();
        return Err(CliError::Verification(failed.join(", ")));
    }
    Ok(checks)
}

/// Emits the report files; an input without usable records still writes
/// the header-only CSVs before returning `EmptyReport`.
pub fn cmd_report(log_dir: &Path, out: &Path, k: usize) -> CliResult<ReportOutcome> {
    if k == 0 {
        return Err(CliError::Config("--k: must be at least 1".into()));
    }
    let records = collect_records(log_dir)?;
    let opts = ReportOptions {
        k,
        ..ReportOptions::default()
    };
    let outcome = emit_report(&records, out, opts)?;
    if outcome.is_empty() {
        return Err(CliError::EmptyReport(log_dir.to_path_buf()));
    }
    Ok(outcome)
}

pub fn cmd_bench(config: &Path, out: Option<&Path>, seed: Option<u64>) -> CliResult<bench::BenchReport> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let report = bench::run_bench(&cfg)?;
    if let Some(dir) = out.map(Path::to_path_buf).or_else(|| cfg.out_dir.clone()) {
        bench::write_bench_csv(&report, &dir)?;
    }
    Ok(report)
}
