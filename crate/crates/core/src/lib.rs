//! Motion planning with learned diffusion priors over trajectories.
//!
//! The crate bundles the pieces needed to train and use a trajectory
//! diffusion model as a planner: planar SDF environments and robot models,
//! a Gaussian-process smoothness prior, differentiable task costs, the
//! diffusion schedule and guided reverse sampler, a small temporal
//! convolutional denoiser with hand-written backprop, classical planners
//! (RRT-Connect, B-spline smoothing, GPMP-style optimization) for expert
//! data and baselines, dataset I/O, and benchmark metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod checksum;
pub mod bench;
pub mod costs;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod lie;
pub mod planners;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{Environment, Pose3, RobotModel, SdfPrimitive};
pub use trajectory::{GpParams, Trajectory};
