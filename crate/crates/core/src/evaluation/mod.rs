//! NMR and GLD metrics, dataset evaluation and the Wilcoxon batch protocol.

mod dataset;
mod metrics;
mod stats;

pub use dataset::{
    evaluate_dataset, evaluate_scene, scene_record, statistics, write_records_csv, write_records_jsonl,
    write_report_json, Comparison, EvalConfig, EvalRecord, Metric, StatReport,
};
pub use metrics::{gld, nmr, nmr_with_count, Range};
pub use stats::{
    bonferroni, wilcoxon_exact, wilcoxon_normal, wilcoxon_signed_rank, EXACT_MAX_N, MIN_PAIRS,
};
