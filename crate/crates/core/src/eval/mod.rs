//! Metrics, cross-validation, distribution distances and significance tests.

pub mod cross_validation;
pub mod emd;
pub mod metrics;
pub mod probe;
pub mod ttest;

pub use cross_validation::{
    cross_validate, emd_worst_case, evaluate_recordings, format_table, subject_amplitudes,
    CrossValidationReport, Evaluation, FoldObserver, FoldReport, SilentObserver, SubjectReport,
    EMD_MAX_SAMPLES,
};
pub use emd::{emd_subject_distance, subsample, wasserstein1, worst_case_report, WorstCaseEntry};
pub use metrics::{
    compute_metrics, majority_baseline, summarize, ConfusionMatrix, MeanStd, Metrics, Summary,
};
pub use probe::linear_probe_accuracy;
pub use ttest::{paired_t_test, TTest};
