//! Anomaly scoring, min-max scaling, ROC/AUC, histograms and latency.

mod bench;
mod report;
mod roc;
mod scaling;
mod score;

pub use bench::{latency_bench, median_p95, BenchReport, Hardware, DEFAULT_WARMUP};
pub use report::{
    histogram, histogram_csv, roc_csv, scores_csv, Histogram, HistogramBin, ScoreSet,
    HISTOGRAM_CSV_HEADER, ROC_CSV_HEADER, SCORES_CSV_HEADER,
};
pub use roc::{average_ranks, roc_auc, RocCurve, RocPoint};
pub use scaling::{
    scale_scores, scale_with_range, Scaled, ScoreRange, Threshold, DEGENERATE_WARNING,
};
pub use score::{
    anomaly_score, anomaly_scores, thread_cap, ScoreDistance, ScoreKind, ScoreRun,
    DEFAULT_SCORE_BATCH, THREADS_ENV,
};
