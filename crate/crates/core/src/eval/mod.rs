//! Detection metrics and result tables.
//!
//! ID samples are the positive class throughout.

mod metrics;
mod report;

pub use metrics::{acc_at_threshold, acc_at_tpr, auroc, mann_whitney, MannWhitney, ScoredDataset};
pub use report::{
    compare_conditions, parse_csv, render_csv, render_markdown, EvalReport, EvalRow, Outcome,
    CSV_HEADER,
};

/// True positive rate used for the accuracy column.
pub const DEFAULT_TPR: f64 = 0.95;
