use std::path::Path;

use serde::Serialize;

use pernode_core::training::train;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::grid::{dataset_id, plan, SkippedVariant};

pub const MIN_BENCH_EPOCHS: usize = 5;
pub const BENCH_FILE: &str = "bench.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "Variant")]
    pub variant: String,
    #[serde(rename = "DR")]
    pub drop_rate: f64,
    #[serde(rename = "Epochs")]
    pub epochs: usize,
    #[serde(rename = "MeanSeconds")]
    pub mean_seconds: f64,
    #[serde(rename = "StdSeconds")]
    pub std_seconds: f64,
    /// Mean epoch time relative to the Dropout variant, when one is present.
    #[serde(rename = "RatioToDropout")]
    pub ratio_to_dropout: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<SkippedVariant>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Times every variant at the first configured drop rate on identical data
/// and model widths, for at least five epochs each.
pub fn run_bench(cfg: &ExperimentConfig) -> CliResult<BenchReport> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let rate = *cfg
        .train
        .drop_rates
        .first()
        .ok_or_else(|| CliError::Config("train.drop_rates: must not be empty".into()))?;
    cfg.train.drop_rates = vec![rate];
    cfg.train.epochs = cfg.train.epochs.max(MIN_BENCH_EPOCHS);
    cfg.train.early_stop = None;

    let data = cfg.load_dataset()?;
    let (tr, va) = data
        .split(cfg.dataset.val_fraction, cfg.split_seed())
        .map_err(|e| CliError::Config(format!("dataset.val_fraction: {e}")))?;
    let (plans, skipped) = plan(&cfg, &data, &dataset_id(&cfg)?)?;

    let mut rows = Vec::new();
    for p in &plans {
        let run = train(&p.model, &cfg.train, &tr, &va)?;
        let times: Vec<f64> = run.records.iter().map(|r| r.epoch_wall_seconds).collect();
        let (mean, std) = mean_std(&times);
        rows.push(BenchRow {
            variant: p.variant.clone(),
            drop_rate: rate,
            epochs: times.len(),
            mean_seconds: mean,
            std_seconds: std,
            ratio_to_dropout: None,
        });
    }
    if let Some(base) = rows.iter().find(|r| r.variant == "Dropout").map(|r| r.mean_seconds) {
        for r in &mut rows {
            r.ratio_to_dropout = Some(r.mean_seconds / base);
        }
    }
    Ok(BenchReport { rows, skipped })
}

pub fn write_bench_csv(report: &BenchReport, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let path = out_dir.join(BENCH_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for r in &report.rows {
        w.serialize(r)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn format_table(report: &BenchReport) -> String {
    let mut s = format!(
        "{:<28} {:>6} {:>14} {:>10}\n",
        "Variant", "Epochs", "Mean ± Std (s)", "vs Dropout"
    );
    for r in &report.rows {
        let ratio = r.ratio_to_dropout.map_or("-".to_string(), |x| format!("{x:.2}x"));
        s.push_str(&format!(
            "{:<28} {:>6} {:>7.4} ± {:<6.4} {:>8}\n",
            r.variant, r.epochs, r.mean_seconds, r.std_seconds, ratio
        ));
    }
    for sk in &report.skipped {
        s.push_str(&format!("{:<28} skipped: {}\n", sk.variant, sk.error));
    }
    s
}
