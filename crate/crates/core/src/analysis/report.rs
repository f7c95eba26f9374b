//! CSV tables and static SVG charts from run records.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::selection::{rank_records, select_top_k};
use crate::analysis::stats::RankReport;
use crate::error::Result;
use crate::training::TrainRecord;

pub const TOPK_FILE: &str = "topk.csv";
pub const RANK_FILE: &str = "rank_report.csv";
pub const BAR_FILE: &str = "top3_val_loss.svg";
pub const SCATTER_FILE: &str = "val_vs_train_loss.svg";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReportOptions {
    /// Records per variant in `topk.csv`.
    pub k: usize,
    /// Records per variant fed to the Friedman ranking.
    pub rank_k: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { k: 3, rank_k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    #[serde(rename = "Variant")]
    pub variant: String,
    #[serde(rename = "DR")]
    pub drop_rate: f64,
    #[serde(rename = "Ep")]
    pub epoch: usize,
    #[serde(rename = "V-Acc")]
    pub val_acc: f64,
    #[serde(rename = "V-Loss")]
    pub val_loss: f64,
    #[serde(rename = "T-Loss")]
    pub train_loss_clean: f64,
    #[serde(rename = "T-Acc")]
    pub train_acc_clean: f64,
}

impl From<&TrainRecord> for TopkRow {
    fn from(r: &TrainRecord) -> Self {
        Self {
            variant: r.variant.clone(),
            drop_rate: r.drop_rate,
            epoch: r.epoch,
            val_acc: r.val_acc,
            val_loss: r.val_loss,
            train_loss_clean: r.train_loss_clean,
            train_acc_clean: r.train_acc_clean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    #[serde(rename = "Variant")]
    pub variant: String,
    #[serde(rename = "MeanRank")]
    pub mean_rank: f64,
    #[serde(rename = "PooledMeanRank")]
    pub pooled_mean_rank: f64,
    #[serde(rename = "FriedmanChi2")]
    pub friedman_chi2: f64,
    #[serde(rename = "PValue")]
    pub p_value: f64,
    #[serde(rename = "KendallW")]
    pub kendall_w: f64,
    #[serde(rename = "NBlocks")]
    pub n_blocks: usize,
    #[serde(rename = "KVariants")]
    pub k_variants: usize,
}

const TOPK_HEADER: [&str; 7] = ["Variant", "DR", "Ep", "V-Acc", "V-Loss", "T-Loss", "T-Acc"];
const RANK_HEADER: [&str; 8] = [
    "Variant",
    "MeanRank",
    "PooledMeanRank",
    "FriedmanChi2",
    "PValue",
    "KendallW",
    "NBlocks",
    "KVariants",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutcome {
    pub topk: Vec<TrainRecord>,
    /// `None` when fewer than two variants have `rank_k` usable records.
    pub rank: Option<RankReport>,
    pub files: Vec<PathBuf>,
}

impl ReportOutcome {
    pub fn is_empty(&self) -> bool {
        self.topk.is_empty()
    }
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_topk(path: &Path) -> Result<Vec<TopkRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes `topk.csv`, `rank_report.csv` and, when there is anything to
/// plot, the two SVG charts.
pub fn emit_report(records: &[TrainRecord], out_dir: &Path, opts: ReportOptions) -> Result<ReportOutcome> {
    fs::create_dir_all(out_dir)?;
    let topk = select_top_k(records, opts.k);
    let rows: Vec<TopkRow> = topk.iter().map(TopkRow::from).collect();
    let topk_path = out_dir.join(TOPK_FILE);
    write_csv(&topk_path, &TOPK_HEADER, &rows)?;

    let rank = rank_records(records, opts.rank_k).ok().filter(|r| r.k_variants >= 2);
    let rank_rows: Vec<RankRow> = rank
        .iter()
        .flat_map(|r| {
            r.variants.iter().enumerate().map(move |(j, v)| RankRow {
                variant: v.clone(),
                mean_rank: r.mean_ranks[j],
                pooled_mean_rank: r.pooled_mean_ranks[j],
                friedman_chi2: r.friedman_chi2,
                p_value: r.p_value,
                kendall_w: r.kendall_w,
                n_blocks: r.n_blocks,
                k_variants: r.k_variants,
            })
        })
        .collect();
    let rank_path = out_dir.join(RANK_FILE);
    write_csv(&rank_path, &RANK_HEADER, &rank_rows)?;

    let mut files = vec![topk_path, rank_path];
    if !topk.is_empty() {
        let bar = out_dir.join(BAR_FILE);
        fs::write(&bar, bar_chart_svg(&select_top_k(records, 3)))?;
        let points: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| !r.diverged && r.val_loss.is_finite() && r.train_loss_clean.is_finite())
            .map(|r| (r.val_loss, r.train_loss_clean))
            .collect();
        let scatter = out_dir.join(SCATTER_FILE);
        fs::write(&scatter, scatter_svg(&points))?;
        files.push(bar);
        files.push(scatter);
    }
    Ok(ReportOutcome { topk, rank, files })
}

/// Median of `values` and the indices falling on each side. Values equal to
/// the median go left.
pub fn median_split(values: &[f64]) -> (f64, Vec<usize>, Vec<usize>) {
    if values.is_empty() {
        return (f64::NAN, Vec::new(), Vec::new());
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let (left, right) = (0..n).partition(|&i| values[i] <= median);
    (median, left, right)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Horizontal bars of the given records' validation losses, ascending.
pub fn bar_chart_svg(records: &[TrainRecord]) -> String {
    let mut bars: Vec<&TrainRecord> = records.iter().collect();
    bars.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    let (label_w, plot_w, row_h, top) = (230.0, 420.0, 18.0, 30.0);
    let height = top + row_h * bars.len() as f64 + 20.0;
    let max = bars
        .iter()
        .map(|r| r.val_loss)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = svg_open(label_w + plot_w + 80.0, height);
    let _ = writeln!(
        s,
        "<text x=\"10\" y=\"18\" font-size=\"13\">Lowest validation losses per variant</text>"
    );
    for (i, r) in bars.iter().enumerate() {
        let y = top + row_h * i as f64;
        let w = plot_w * r.val_loss / max;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{} (p={}, ep {})</text>\
             <rect x=\"{label_w}\" y=\"{:.1}\" width=\"{w:.2}\" height=\"{:.1}\" fill=\"#4c72b0\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\">{:.4}</text>",
            label_w - 6.0,
            y + 12.0,
            escape(&r.variant),
            r.drop_rate,
            r.epoch,
            y + 2.0,
            row_h - 4.0,
            label_w + w + 4.0,
            y + 12.0,
            r.val_loss
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Two-panel scatter of `(val_loss, train_loss)` split at the median
/// validation loss.
pub fn scatter_svg(points: &[(f64, f64)]) -> String {
    let vals: Vec<f64> = points.iter().map(|p| p.0).collect();
    let (median, left, right) = median_split(&vals);
    let (panel_w, panel_h, margin) = (300.0, 260.0, 45.0);
    let mut s = svg_open(2.0 * (panel_w + margin) + margin, panel_h + 2.0 * margin);
    let _ = writeln!(
        s,
        "<text x=\"{margin}\" y=\"20\" font-size=\"13\">Validation vs clean training loss, split at median {median:.4}</text>"
    );
    for (panel, idx) in [left, right].iter().enumerate() {
        let x0 = margin + panel as f64 * (panel_w + margin);
        let y0 = margin;
        let _ = writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{panel_w}\" height=\"{panel_h}\" fill=\"none\" stroke=\"#333\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} median (n={})</text>",
            x0 + panel_w / 2.0,
            y0 + panel_h + 30.0,
            if panel == 0 { "at or below" } else { "above" },
            idx.len()
        );
        if idx.is_empty() {
            continue;
        }
        let xs = idx.iter().map(|&i| points[i].0);
        let ys = idx.iter().map(|&i| points[i].1);
        let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let sx = |v: f64| x0 + 10.0 + (panel_w - 20.0) * if xmax > xmin { (v - xmin) / (xmax - xmin) } else { 0.5 };
        let sy = |v: f64| {
            y0 + panel_h - 10.0 - (panel_h - 20.0) * if ymax > ymin { (v - ymin) / (ymax - ymin) } else { 0.5 }
        };
        for &i in idx {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#dd8452\"/>",
                sx(points[i].0),
                sy(points[i].1)
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{x0}\" y=\"{:.1}\">{xmin:.3}</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{xmax:.3}</text>",
            y0 + panel_h + 14.0,
            x0 + panel_w,
            y0 + panel_h + 14.0
        );
    }
    s.push_str("</svg>\n");
    s
}
