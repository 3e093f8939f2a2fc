//! Shared fixtures for the criterion benchmarks in `benches/`.

use mpd_core::costs::{CostKind, CostSuite, CostTerm};
use mpd_core::denoiser::{DenoiserConfig, DenoiserModel};
use mpd_core::diffusion::{Normalizer, ScheduleConfig};
use mpd_core::geometry::{Bounds, EnvGenConfig};
use mpd_core::{Environment, GpParams, RobotModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const HORIZON: usize = 64;
pub const DT: f64 = 0.05;
pub const START: [f64; 2] = [-0.9, -0.9];
pub const GOAL: [f64; 2] = [0.9, 0.9];

/// The default generated environment with a small point robot.
pub fn scene() -> (Environment, RobotModel) {
    let env = EnvGenConfig::default().generate().expect("default environment");
    (env, RobotModel::point_mass(Bounds::default(), 0.02, 2.0))
}

pub fn suite(env: &Environment, robot: &RobotModel, terms: Vec<CostTerm>) -> CostSuite {
    CostSuite::new(terms, env.clone(), robot.clone(), GpParams::isotropic(DT, robot.dof(), 1.0).expect("gp prior")).expect("cost suite")
}

/// Collision plus GP smoothness, as used for GPMP refinement.
pub fn gpmp_suite(env: &Environment, robot: &RobotModel) -> CostSuite {
    suite(
        env,
        robot,
        vec![
            CostTerm::new(CostKind::Collision, 100.0),
            CostTerm::new(CostKind::GpSmoothness, 1.0),
        ],
    )
}

/// Freshly initialized denoiser of the default width for a 2D point robot.
pub fn untrained_model() -> DenoiserModel {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    DenoiserModel::new(DenoiserConfig::for_shape(HORIZON, 4, 32), Normalizer::identity(4), ScheduleConfig::default(), &mut rng)
        .expect("denoiser")
}
