use std::cmp::Ordering;

use crate::analysis::stats::{friedman_test, RankReport};
use crate::error::{Error, Result};
use crate::training::TrainRecord;

/// Orders by validation loss, then earlier epoch, then lower drop rate.
pub fn record_order(a: &TrainRecord, b: &TrainRecord) -> Ordering {
    a.val_loss
        .total_cmp(&b.val_loss)
        .then(a.epoch.cmp(&b.epoch))
        .then(a.drop_rate.total_cmp(&b.drop_rate))
}

fn usable(r: &TrainRecord) -> bool {
    !r.diverged && r.val_loss.is_finite()
}

/// Variant names in order of first appearance.
pub fn variants(records: &[TrainRecord]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        if !names.contains(&r.variant) {
            names.push(r.variant.clone());
        }
    }
    names
}

/// The `k` lowest-validation-loss records of each variant, pooled across
/// drop rates and epochs. Diverged records never qualify. Output is grouped
/// by variant (first-appearance order), best first within each group.
pub fn select_top_k(records: &[TrainRecord], k: usize) -> Vec<TrainRecord> {
    let mut out = Vec::new();
    for name in variants(records) {
        let mut group: Vec<&TrainRecord> = records.iter().filter(|r| r.variant == name && usable(r)).collect();
        group.sort_by(|a, b| record_order(a, b));
        out.extend(group.into_iter().take(k).cloned());
    }
    out
}

/// Friedman ranking where block `b` holds the `b`-th best validation loss of
/// every variant. Each variant needs at least `n` usable records.
pub fn rank_records(records: &[TrainRecord], n: usize) -> Result<RankReport> {
    let names: Vec<String> = variants(records)
        .into_iter()
        .filter(|v| records.iter().any(|r| &r.variant == v && usable(r)))
        .collect();
    let top = select_top_k(records, n);
    let per_variant: Vec<Vec<f64>> = names
        .iter()
        .map(|v| top.iter().filter(|r| &r.variant == v).map(|r| r.val_loss).collect())
        .collect();
    if let Some((name, got)) = names.iter().zip(&per_variant).find(|(_, vals)| vals.len() < n) {
        return Err(Error::Contract(format!(
            "variant {name} has {} usable records, ranking needs {n}",
            got.len()
        )));
    }
    let blocks: Vec<Vec<f64>> = (0..n)
        .map(|b| per_variant.iter().map(|vals| vals[b]).collect())
        .collect();
    let mut report = friedman_test(&blocks, true)?;
    report.variants = names;
    Ok(report)
}
