//! Metrics, the seed/fold evaluation protocol and report emission.

mod metrics;
mod plot;
mod protocol;
mod report;

pub use metrics::{auroc, balanced_accuracy, binary_auroc, f1_score, roc_curve, F1Average};
pub use plot::{curves_svg, roc_svg};
pub use protocol::{
    cell_config, cross_view_distance, evaluate_model, factor_oracle_auroc, run_protocol, ProtocolConfig,
    ProtocolOutcome, RocRecord,
};
pub use report::{
    config_hash, AlignmentRecord, Category, MetricCell, Method, MetricsReport, ReportMetadata, ReportRow,
    RowAccumulator, RowKey, Scores, TaskMetrics, REPORT_JSON, REPORT_TABLE,
};
