//! Error metrics, fold construction, report tables and cross validation.

pub mod folds;
pub mod metrics;
pub mod report;
pub mod xval;

pub use folds::{make_folds, FoldSpec};
pub use metrics::{signed_error, unsigned_stats, ErrorStats, ErrorVector};
pub use report::{
    canonical_method_order, evaluate_method, evaluate_methods, EvalImage, ExcludedCell, Metric, Pooling, ReportTable,
    RowKey, Summary, TableKind, INTER_OBSERVER, SEG, SEG_REG,
};
pub use xval::{run_cross_validation, segment_scan, training_sample, FoldArtifacts, HeldOutImage, Pipeline, XvalConfig, XvalOutcome};
