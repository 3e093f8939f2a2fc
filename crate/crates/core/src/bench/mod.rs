//! Benchmark metrics, run orchestration and SVG rendering.

mod metrics;
mod render;
mod run;

pub use metrics::{
    metric_intensity, metric_path_length, metric_success, metric_waypoint_variance, trajectory_free, waypoint_in_collision, Stat,
};
pub use render::{render_svg, render_svg_string};
pub use run::{
    evaluate_batch, run_benchmark, BenchOutcome, BenchSetup, Context, ContextRow, MetricReport, PlanFile, PlanRecord, PlannerKind, RunConfig,
};
