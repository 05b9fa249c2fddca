//! Metrics and evaluation protocols.

pub mod dynamic;
pub mod metrics;
pub mod protocols;

pub use dynamic::{dynamic_opinion_forecast, DynamicConfig, DynamicForecast, DynamicForecastRecord, WindowSummary};
pub use metrics::{compute_metrics, macro_f1, mape, r2, rmse, ChannelMetrics, MetricReport, Scored};
pub use protocols::{
    early_prediction_sweep, overall_eval, staged_next_eval, OverallReport, PostPrediction, Predictor, Stage, SweepRow,
    DEFAULT_CHECKPOINTS_MINUTES,
};
