//! Dataset CSV files.
//!
//! `features.csv` has a `sample_id` column followed by `f0, f1, ...`.
//! `labels.csv` has `sample_id,label` for multiclass data, or
//! `sample_id,l0,l1,...` with 0/1 entries for multilabel data.

use std::path::{Path, PathBuf};

use pernode_core::data::{argmax, one_hot, Dataset, Task};
use pernode_core::Tensor;

use crate::error::{CliError, CliResult};

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

pub fn write_dataset(data: &Dataset, dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let fpath = dir.join(FEATURES_FILE);
    let lpath = dir.join(LABELS_FILE);

    let mut w = csv::Writer::from_path(&fpath).map_err(|e| csv_err(&fpath, e))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..data.n_features()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(&fpath, e))?;
    for (r, id) in data.sample_ids.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(data.features.row(r).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(&fpath, e))?;
    }
    w.flush().map_err(|e| CliError::io(&fpath, e))?;

    let mut w = csv::Writer::from_path(&lpath).map_err(|e| csv_err(&lpath, e))?;
    match data.task {
        Task::Multiclass => {
            w.write_record(["sample_id", "label"]).map_err(|e| csv_err(&lpath, e))?;
            for (r, id) in data.sample_ids.iter().enumerate() {
                let label = argmax(data.targets.row(r));
                w.write_record([id.to_string(), label.to_string()])
                    .map_err(|e| csv_err(&lpath, e))?;
            }
        }
        Task::Multilabel => {
            let mut header = vec!["sample_id".to_string()];
            header.extend((0..data.n_outputs()).map(|j| format!("l{j}")));
            w.write_record(&header).map_err(|e| csv_err(&lpath, e))?;
            for (r, id) in data.sample_ids.iter().enumerate() {
                let mut row = vec![id.to_string()];
                row.extend(data.targets.row(r).iter().map(|v| format!("{}", *v as u8)));
                w.write_record(&row).map_err(|e| csv_err(&lpath, e))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&lpath, e))?;
    Ok((fpath, lpath))
}

fn read_table(path: &Path) -> CliResult<(Vec<u64>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(CliError::Config(format!("{}: file not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("sample_id") || headers.len() < 2 {
        return Err(CliError::Config(format!(
            "{}: expected a header starting with sample_id and at least one more column",
            path.display()
        )));
    }
    let (mut ids, mut rows) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec[0].trim().parse::<u64>().map_err(|e| {
            CliError::Config(format!(
                "{} row {}: bad sample_id {:?}: {e}",
                path.display(),
                line + 2,
                &rec[0]
            ))
        })?;
        ids.push(id);
        rows.push(rec.iter().skip(1).map(|s| s.trim().to_string()).collect());
    }
    if ids.is_empty() {
        return Err(CliError::Config(format!("{}: no data rows", path.display())));
    }
    Ok((ids, rows))
}

fn parse_f64(path: &Path, row: usize, s: &str) -> CliResult<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
        CliError::Config(format!(
            "{} row {}: {s:?} is not a finite number",
            path.display(),
            row + 2
        ))
    })
}

pub fn read_dataset(features: &Path, labels: &Path, task: Task) -> CliResult<Dataset> {
    let (ids, frows) = read_table(features)?;
    let (lids, lrows) = read_table(labels)?;
    if ids != lids {
        return Err(CliError::Config(format!(
            "{} and {} list different sample ids",
            features.display(),
            labels.display()
        )));
    }
    let mut data = Vec::with_capacity(frows.len() * frows[0].len());
    for (r, row) in frows.iter().enumerate() {
        for s in row {
            data.push(parse_f64(features, r, s)?);
        }
    }
    let x = Tensor::new(vec![frows.len(), frows[0].len()], data)?;
    let targets = match task {
        Task::Multiclass => {
            let mut labels_idx = Vec::with_capacity(lrows.len());
            for (r, row) in lrows.iter().enumerate() {
                let l = row[0].parse::<usize>().map_err(|_| {
                    CliError::Config(format!(
                        "{} row {}: {:?} is not a class index",
                        labels.display(),
                        r + 2,
                        row[0]
                    ))
                })?;
                labels_idx.push(l);
            }
            let classes = labels_idx.iter().max().map_or(0, |m| m + 1);
            if classes < 2 {
                return Err(CliError::Config(format!(
                    "{}: need at least 2 classes",
                    labels.display()
                )));
            }
            one_hot(&labels_idx, classes)?
        }
        Task::Multilabel => {
            let mut t = Vec::with_capacity(lrows.len() * lrows[0].len());
            for (r, row) in lrows.iter().enumerate() {
                for s in row {
                    match s.as_str() {
                        "0" => t.push(0.0),
                        "1" => t.push(1.0),
                        _ => {
                            return Err(CliError::Config(format!(
                                "{} row {}: multilabel entries must be 0 or 1, got {s:?}",
                                labels.display(),
                                r + 2
                            )))
                        }
                    }
                }
            }
            Tensor::new(vec![lrows.len(), lrows[0].len()], t)?
        }
    };
    Ok(Dataset::new(x, targets, ids, task)?)
}
