//! Classical planners used for expert data and as baselines.

mod bspline;
mod gpmp;
mod rrt;

pub use bspline::{bspline_smooth, ClampedCubicSpline};
pub use gpmp::{gp_precision, gpmp_optimize, gpmp_with, primed_gpmp, GpPreconditioner, GpmpParams, GpmpResult};
pub use rrt::{edge_valid, rrt_connect, RrtParams};
