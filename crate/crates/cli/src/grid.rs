//! Variant × drop-rate grids with resumable per-run logs.
//!
//! Layout under the output directory:
//! `runs/<key>.jsonl` holds one run's records and `manifest.json` lists every
//! planned run in plan order. A run whose log already exists is not
//! executed again, so deleting a log re-executes exactly that run.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pernode_core::data::Dataset;
use pernode_core::regularizers::{RegularizerKind, RegularizerTag};
use pernode_core::training::{read_records, train, write_records, ModelConfig, TrainConfig, TrainRecord, TrainRun};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RUNS_DIR: &str = "runs";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct RunPlan {
    pub key: String,
    pub variant: String,
    pub model: ModelConfig,
    pub drop_rate: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: String,
    pub variant: String,
    pub drop_rate: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedVariant {
    pub variant: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub runs: Vec<ManifestEntry>,
    #[serde(default)]
    pub skipped_variants: Vec<SkippedVariant>,
}

#[derive(Clone, Debug, Default)]
pub struct GridSummary {
    pub manifest: Manifest,
    pub executed: usize,
    pub resumed: usize,
    /// All records in plan order.
    pub records: Vec<TrainRecord>,
}

impl GridSummary {
    pub fn failures(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.runs.iter().filter(|r| r.status == RunStatus::Failed)
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Identifies the data a grid trains on: the generator spec for synthetic
/// data, a content hash for CSV files, plus the split.
pub fn dataset_id(cfg: &ExperimentConfig) -> CliResult<String> {
    let d = &cfg.dataset;
    let source = if let Some(s) = &d.synthetic {
        serde_json::to_string(s).expect("synthetic spec serializes")
    } else {
        let csv = d.csv.as_ref().expect("validated dataset source");
        let mut h = Sha256::new();
        for p in [&csv.features, &csv.labels] {
            h.update(fs::read(p).map_err(|e| CliError::io(p, e))?);
        }
        format!("csv:{}:{:?}", hex::encode(h.finalize()), csv.task)
    };
    Ok(sha_hex(
        format!("{source}|val={}|split={}", d.val_fraction, cfg.split_seed()).as_bytes(),
    ))
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    dataset: &'a str,
    model: &'a ModelConfig,
    variant: &'a str,
    drop_rate: f64,
    seed: u64,
    batch_size: usize,
    epochs: usize,
    learning_rate: f64,
    early_stop: Option<usize>,
}

pub fn run_key(dataset: &str, model: &ModelConfig, variant: &str, drop_rate: f64, train: &TrainConfig) -> String {
    let material = KeyMaterial {
        dataset,
        model,
        variant,
        drop_rate,
        seed: train.seed,
        batch_size: train.batch_size,
        epochs: train.epochs,
        learning_rate: train.learning_rate,
        early_stop: train.early_stop,
    };
    sha_hex(&serde_json::to_vec(&material).expect("key material serializes"))[..32].to_string()
}

/// Builds the run list. MaskEnsemble variants whose group count does not
/// divide the slot input are skipped and reported; any other invalid
/// variant aborts the whole grid.
pub fn plan(cfg: &ExperimentConfig, data: &Dataset, dataset: &str) -> CliResult<(Vec<RunPlan>, Vec<SkippedVariant>)> {
    cfg.require_grid()?;
    let mut plans = Vec::new();
    let mut skipped = Vec::new();
    for (i, v) in cfg.variants.iter().enumerate() {
        let name = v.display_name(cfg.train.seed);
        let base = v.to_kind(cfg.train.seed);
        let probe = cfg.model_config(data, base.clone())?;
        probe.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
        if let Err(e) = base.validate(probe.slot_input_dim()) {
            if base.tag == RegularizerTag::MaskEnsemble {
                skipped.push(SkippedVariant {
                    variant: name,
                    error: e.to_string(),
                });
                continue;
            }
            return Err(CliError::Config(format!("variants[{i}]: {e}")));
        }
        for &p in &cfg.train.drop_rates {
            let kind: RegularizerKind = base.with_drop_rate(p);
            kind.validate(probe.slot_input_dim())
                .map_err(|e| CliError::Config(format!("variants[{i}] at drop rate {p}: {e}")))?;
            let model = ModelConfig {
                regularizer: kind,
                ..probe.clone()
            };
            plans.push(RunPlan {
                key: run_key(dataset, &model, &name, p, &cfg.train),
                variant: name.clone(),
                model,
                drop_rate: p,
                seed: cfg.train.seed,
            });
        }
    }
    Ok((plans, skipped))
}

fn run_path(out_dir: &Path, key: &str) -> PathBuf {
    out_dir.join(RUNS_DIR).join(format!("{key}.jsonl"))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn status_of(records: &[TrainRecord]) -> RunStatus {
    if records.iter().any(|r| r.diverged) {
        RunStatus::Diverged
    } else {
        RunStatus::Completed
    }
}

fn entry(plan: &RunPlan, status: RunStatus, records: usize, error: Option<String>) -> ManifestEntry {
    ManifestEntry {
        key: plan.key.clone(),
        variant: plan.variant.clone(),
        drop_rate: plan.drop_rate,
        seed: plan.seed,
        status,
        records,
        error,
    }
}

/// Runs every pending plan on `jobs` worker threads. Results funnel through
/// a channel to this thread, which is the only writer of log files.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> CliResult<GridSummary> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let dataset = dataset_id(cfg)?;
    let (train_set, val_set) = data
        .split(cfg.dataset.val_fraction, cfg.split_seed())
        .map_err(|e| CliError::Config(format!("dataset.val_fraction: {e}")))?;
    let (plans, skipped) = plan(cfg, &data, &dataset)?;

    let runs_dir = out_dir.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).map_err(|e| CliError::io(&runs_dir, e))?;

    let mut results: Vec<Option<(ManifestEntry, Vec<TrainRecord>)>> = vec![None; plans.len()];
    let mut pending = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        let path = run_path(out_dir, &p.key);
        if path.exists() {
            let records = read_records(&path)?;
            results[i] = Some((entry(p, status_of(&records), records.len(), None), records));
        } else {
            pending.push(i);
        }
    }
    let resumed = plans.len() - pending.len();

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, pernode_core::Result<TrainRun>)>();
    let workers = jobs.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| -> CliResult<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, plans) = (&next, &pending, &plans);
            let (train_set, val_set) = (&train_set, &val_set);
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(slot) else { break };
                let run = train(&plans[i].model, &cfg.train, train_set, val_set);
                if tx.send((i, run)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, run) in rx {
            let p = &plans[i];
            match run {
                Ok(run) => {
                    let records: Vec<TrainRecord> = run
                        .records
                        .into_iter()
                        .map(|mut r| {
                            r.variant = p.variant.clone();
                            r
                        })
                        .collect();
                    let mut buf = Vec::new();
                    write_records(&mut buf, &records)?;
                    write_atomic(&run_path(out_dir, &p.key), &buf)?;
                    results[i] = Some((entry(p, status_of(&records), records.len(), None), records));
                }
                Err(e) => {
                    results[i] = Some((entry(p, RunStatus::Failed, 0, Some(e.to_string())), Vec::new()));
                }
            }
        }
        Ok(())
    })?;

    let mut summary = GridSummary {
        executed: pending.len(),
        resumed,
        ..GridSummary::default()
    };
    summary.manifest.dataset_id = dataset;
    summary.manifest.skipped_variants = skipped;
    for (entry, records) in results.into_iter().map(|r| r.expect("every plan produced a result")) {
        summary.manifest.runs.push(entry);
        summary.records.extend(records);
    }
    let manifest = serde_json::to_vec_pretty(&summary.manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

/// Records of a grid directory in manifest order, or of every `*.jsonl`
/// file (sorted by name) in a plain log directory.
pub fn collect_records(log_dir: &Path) -> CliResult<Vec<TrainRecord>> {
    if !log_dir.is_dir() {
        return Err(CliError::Config(format!(
            "{}: log directory not found",
            log_dir.display()
        )));
    }
    let manifest_path = log_dir.join(MANIFEST_FILE);
    let mut records = Vec::new();
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
        for run in manifest.runs {
            let path = run_path(log_dir, &run.key);
            if path.exists() {
                records.extend(read_records(&path)?);
            }
        }
        return Ok(records);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(log_dir)
        .map_err(|e| CliError::io(log_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    for f in files {
        records.extend(read_records(&f)?);
    }
    Ok(records)
}
