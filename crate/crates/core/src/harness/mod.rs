//! Twin experiment harness: scenario configuration, strategy runs, metrics
//! and plots.

pub mod config;
pub mod metrics;
pub mod output;
pub mod plot;
pub mod twin;

pub use config::{ScenarioConfig, Strategy};
pub use metrics::{oil_presence_error, read_metrics_csv, rms_current_error_where_oil, write_metrics_csv, MetricRow, MetricsSeries, METRICS_CSV_HEADER};
pub use twin::{plan_from_state, run_strategy, run_truth, run_twin_experiment, spin_up_test, StrategyRun, TruthRecord, TwinResult};
pub use output::{recompute_metrics, render_plots, write_twin_outputs};
