pub mod config;
pub mod engine;
pub mod experiments;
pub mod metrics;
pub mod output;

pub use config::{ExperimentConfig, Scenario};
pub use engine::{probe_estimates, simulate, simulate_with, Probe, RunMetrics, RunOutcome, Trace, Windows};
pub use experiments::{
    ablation_grid, run_ablation, run_multi_robot, run_single_robot, Column, MetricsReport, MultiRobotOutput, RunRecord,
    SingleRobotOutput,
};
pub use metrics::{peak, rms, rms_avg, Headline};
pub use output::{emit_plot_data, write_report, PlotKind};
