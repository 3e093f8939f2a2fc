//! On-disk configuration of each subcommand. Relative paths inside a config
//! are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use mpd_core::dataset::ExpertConfig;
use mpd_core::denoiser::{DenoiserConfig, TrainConfig};
use mpd_core::diffusion::ScheduleConfig;
use mpd_core::geometry::{Bounds, EnvGenConfig};
use mpd_core::{Error, Result, RobotModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(config: &Path, p: &Path) -> PathBuf {
    config.parent().unwrap_or(Path::new(".")).join(p)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobotSpec {
    PointMass2d {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_max_velocity")]
        max_velocity: f64,
    },
    PlanarArm {
        link_lengths: Vec<f64>,
    },
}

fn default_radius() -> f64 {
    0.02
}

fn default_max_velocity() -> f64 {
    2.0
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec::PointMass2d {
            radius: default_radius(),
            max_velocity: default_max_velocity(),
        }
    }
}

impl RobotSpec {
    pub fn build(&self, bounds: Bounds) -> Result<RobotModel> {
        let robot = match self {
            RobotSpec::PointMass2d { radius, max_velocity } => RobotModel::point_mass(bounds, *radius, *max_velocity),
            RobotSpec::PlanarArm { link_lengths } => RobotModel::planar_arm(link_lengths),
        };
        robot.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(robot)
    }
}

/// `gen-env`: generator settings plus the robot that will use the scene.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenEnvConfig {
    #[serde(flatten)]
    pub generator: EnvGenConfig,
    pub robot: RobotSpec,
}

/// `gen-data`: environment file plus expert pipeline settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub environment: PathBuf,
    #[serde(flatten)]
    pub expert: ExpertConfig,
}

impl GenDataConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.environment = resolve(path, &cfg.environment);
        cfg.expert.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// `train`: dataset directory, architecture, noise schedule and optimizer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    /// Hidden width used when `model` is absent.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Full architecture; overrides `width`. Horizon and state size must
    /// match the dataset.
    #[serde(default)]
    pub model: Option<DenoiserConfig>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_width() -> usize {
    32
}

impl TrainRunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.dataset = resolve(path, &cfg.dataset);
        cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// `render`: the environment and a plan file written by `plan`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenderConfig {
    pub environment: PathBuf,
    pub plans: PathBuf,
    #[serde(default = "default_true")]
    pub extra_obstacles: bool,
    /// Record indices to draw; all records when absent.
    #[serde(default)]
    pub records: Option<Vec<usize>>,
}

fn default_true() -> bool {
    true
}

impl RenderConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.environment = resolve(path, &cfg.environment);
        cfg.plans = resolve(path, &cfg.plans);
        Ok(cfg)
    }
}
