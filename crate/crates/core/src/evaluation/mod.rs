//! Evaluation metrics and reports.

pub mod ex;
pub mod judge;
pub mod metrics;
pub mod report;

pub use ex::{
    compare_results, execution_accuracy, execution_verdict, has_top_level_order_by, judge_outcomes, CompareMode,
    ExVerdict,
};
pub use judge::{calibrate, judge_score, CalibrationModel, JudgeError, JudgeScore};
pub use metrics::{bleu, keyword_f1, rouge, MetricError, Prf, RougeScores};
pub use report::{aggregate, aggregate_nlu, ErrorCategory, ItemRecord, ItemStatus, MetricReport, NluItemRecord};
