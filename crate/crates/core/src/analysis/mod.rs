//! Penalty verification, record selection, rank statistics and reports.

pub mod penalty;
pub mod report;
pub mod selection;
pub mod stats;

pub use penalty::{
    closed_form_penalty, estimate_penalty, general_trace_penalty, mc_expected_loss_gap, PenaltyEstimate,
};
pub use report::{emit_report, median_split, ReportOptions, ReportOutcome};
pub use selection::{rank_records, select_top_k};
pub use stats::{friedman_test, RankReport};
