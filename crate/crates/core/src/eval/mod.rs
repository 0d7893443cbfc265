//! Held-out prediction, metrics against the naive baseline, and 2-D projections.

mod predict;
mod projection;
mod report;

pub use predict::{naive_baseline, predict, PredictionProvenance, PredictionSet, PREDICT_RK4_STEP};
pub use projection::{emit_projection, Pca2};
pub use report::{evaluate, l2_metric, EvalOptions, MetricReport, MetricRow, TaskSummary, MAX_PREDICTED_CELLS};
