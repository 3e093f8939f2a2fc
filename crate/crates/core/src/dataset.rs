//! Expert trajectory datasets: generation by RRT-Connect, B-spline
//! smoothing and GPMP refinement; context-level splits; on-disk format.
//!
//! A dataset directory holds `manifest.json`, `trajectories.f32` (a
//! row-major little-endian `f32` tensor of shape `[M, H, d]`) and
//! `provenance.jsonl` (one record per stored trajectory). Every stored value
//! is representable as `f32`, so a save/load round trip is exact.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checksum::{f32_blob, read_f32_blob, sha256_hex};
use crate::costs::{CostKind, CostSuite, CostTerm};
use crate::diffusion::Normalizer;
use crate::error::{Error, Result};
use crate::geometry::{sample_free_config, Environment, RobotModel, DEFAULT_SAMPLE_BUDGET};
use crate::planners::{bspline_smooth, edge_valid, gpmp_with, rrt_connect, GpPreconditioner, GpmpParams, RrtParams};
use crate::trajectory::{GpParams, Trajectory};

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FILE: &str = "trajectories.f32";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningContext {
    pub id: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub seed: u64,
}

/// Settings of the expert pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub n_contexts: usize,
    pub n_per_context: usize,
    pub horizon: usize,
    pub dt: f64,
    pub rrt: RrtParams,
    pub gpmp: GpmpParams,
    /// Collision temperature of the refinement suite.
    pub collision_lambda: f64,
    /// Clearance targeted by the refinement collision hinge.
    pub collision_margin: f64,
    /// Isotropic `Qc` of the GP prior.
    pub gp_qc: f64,
    /// Clearance required of sampled endpoints.
    pub endpoint_margin: f64,
    /// Minimum configuration-space distance between start and goal.
    pub min_endpoint_distance: f64,
    /// Context draws allowed per context before giving up.
    pub context_attempts: usize,
    /// Spacing of the final dense collision re-check.
    pub validation_resolution: f64,
    pub val_fraction: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            n_contexts: 100,
            n_per_context: 10,
            horizon: 64,
            dt: 0.05,
            rrt: RrtParams::default(),
            gpmp: GpmpParams {
                iterations: 200,
                ..Default::default()
            },
            collision_lambda: 100.0,
            collision_margin: 0.03,
            gp_qc: 1.0,
            endpoint_margin: 0.02,
            min_endpoint_distance: 0.8,
            context_attempts: 50,
            validation_resolution: 0.001,
            val_fraction: 0.05,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_contexts == 0 || self.n_per_context == 0 || self.context_attempts == 0 {
            return Err(Error::Config("context and trajectory counts must be positive".into()));
        }
        if self.horizon < 3 || !(self.dt > 0.0) {
            return Err(Error::Config("horizon must be >= 3 and dt positive".into()));
        }
        if !(self.collision_lambda >= 0.0) || !(self.gp_qc > 0.0) || !(self.validation_resolution > 0.0) {
            return Err(Error::Config("invalid refinement weights or validation resolution".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        self.rrt.validate()?;
        self.gpmp.validate()
    }

    /// Collision + GP suite used to refine RRT paths.
    pub fn refinement_suite(&self, env: &Environment, robot: &RobotModel) -> Result<CostSuite> {
        CostSuite::new(
            vec![
                CostTerm::new(CostKind::Collision, self.collision_lambda).with_margin(self.collision_margin),
                CostTerm::new(CostKind::GpSmoothness, 1.0),
            ],
            env.clone(),
            robot.clone(),
            GpParams::isotropic(self.dt, robot.dof(), self.gp_qc)?,
        )
    }
}

/// Context-level train/validation assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub val_fraction: f64,
    pub seed: u64,
    pub train_contexts: Vec<usize>,
    pub val_contexts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// SHA-256 of the environment's JSON encoding.
    pub environment_hash: String,
    pub robot: RobotModel,
    pub horizon: usize,
    pub state_dim: usize,
    pub dt: f64,
    pub n_contexts: usize,
    /// Requested trajectories per context; contexts may keep fewer.
    pub n_per_context: usize,
    pub n_trajectories: usize,
    pub contexts: Vec<PlanningContext>,
    /// Context id of each stored trajectory.
    pub trajectory_context: Vec<usize>,
    pub normalizer: Normalizer,
    pub split: Option<Split>,
    /// SHA-256 of `trajectories.f32`.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub index: usize,
    pub context: usize,
    /// Draw of the context (0 unless earlier endpoint pairs failed).
    pub context_attempt: usize,
    pub rrt_seed: u64,
    pub rrt_waypoints: usize,
    pub gpmp_iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trajectories: Vec<Trajectory>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    /// Stored trajectories mapped into the normalized space.
    pub fn normalized(&self) -> Vec<DMatrix<f64>> {
        self.trajectories.iter().map(|t| self.manifest.normalizer.normalize(&t.states)).collect()
    }

    /// Indices of trajectories belonging to the given contexts.
    pub fn indices_of(&self, contexts: &[usize]) -> Vec<usize> {
        self.manifest
            .trajectory_context
            .iter()
            .enumerate()
            .filter(|(_, c)| contexts.contains(c))
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn environment_hash(env: &Environment) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(env)?.as_bytes()))
}

fn snap(v: f64) -> f64 {
    v as f32 as f64
}

/// Dense collision check of the piecewise-linear interpolation of the
/// trajectory positions, sampled no further apart than `resolution`.
pub fn trajectory_collision_free(env: &Environment, robot: &RobotModel, traj: &Trajectory, resolution: f64) -> bool {
    let pos: Vec<Vec<f64>> = traj.positions().collect();
    pos.windows(2).all(|w| edge_valid(env, robot, &w[0], &w[1], resolution, 0.0))
}

struct ContextOutput {
    context: PlanningContext,
    trajectories: Vec<Trajectory>,
    provenance: Vec<Provenance>,
}

fn context_stream(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

fn generate_context(
    env: &Environment,
    robot: &RobotModel,
    cfg: &ExpertConfig,
    suite: &CostSuite,
    pre: &GpPreconditioner,
    seed: u64,
    id: usize,
) -> Result<ContextOutput> {
    let mut rng = context_stream(seed, id);
    for attempt in 0..cfg.context_attempts {
        let ctx_seed: u64 = rng.random();
        let mut crng = ChaCha8Rng::seed_from_u64(ctx_seed);
        let (start, goal) = loop {
            let s: Vec<f64> = sample_free_config(env, robot, cfg.endpoint_margin, DEFAULT_SAMPLE_BUDGET, &mut crng)?
                .into_iter()
                .map(snap)
                .collect();
            let g: Vec<f64> = sample_free_config(env, robot, cfg.endpoint_margin, DEFAULT_SAMPLE_BUDGET, &mut crng)?
                .into_iter()
                .map(snap)
                .collect();
            let d = s.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d >= cfg.min_endpoint_distance && !robot.in_collision(env, &s, cfg.endpoint_margin) && !robot.in_collision(env, &g, cfg.endpoint_margin) {
                break (s, g);
            }
        };
        let context = PlanningContext {
            id,
            start,
            goal,
            seed: ctx_seed,
        };
        let mut trajectories = Vec::new();
        let mut provenance = Vec::new();
        for k in 0..cfg.n_per_context {
            let rrt_seed = ctx_seed.wrapping_add(1 + k as u64);
            let mut prng = ChaCha8Rng::seed_from_u64(rrt_seed);
            let path = match rrt_connect(env, robot, &context.start, &context.goal, &cfg.rrt, &mut prng) {
                Ok(p) => p,
                Err(Error::PlannerFailure(_)) => continue,
                Err(e) => return Err(e),
            };
            let init = bspline_smooth(&path, cfg.horizon, cfg.dt)?;
            let refined = match gpmp_with(&init, suite, &cfg.gpmp, pre) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => continue,
                Err(e) => return Err(e),
            };
            let mut states = refined.trajectory.states.map(snap);
            let dof = robot.dof();
            for j in 0..dof {
                states[(0, j)] = context.start[j];
                states[(cfg.horizon - 1, j)] = context.goal[j];
            }
            let traj = Trajectory::new(states, cfg.dt)?;
            if !trajectory_collision_free(env, robot, &traj, cfg.validation_resolution) {
                continue;
            }
            let gp_cost = suite.gp.cost(&traj)?;
            if !gp_cost.is_finite() {
                continue;
            }
            provenance.push(Provenance {
                index: 0,
                context: id,
                context_attempt: attempt,
                rrt_seed,
                rrt_waypoints: path.len(),
                gpmp_iterations: refined.cost_trace.len() - 1,
                initial_cost: refined.cost_trace[0],
                final_cost: *refined.cost_trace.last().unwrap(),
            });
            trajectories.push(traj);
        }
        if !trajectories.is_empty() {
            return Ok(ContextOutput {
                context,
                trajectories,
                provenance,
            });
        }
    }
    Err(Error::PlannerFailure(format!(
        "context {id}: no collision-free expert trajectory after {} context draws",
        cfg.context_attempts
    )))
}

/// Runs the expert pipeline on the base part of `env`. Contexts are
/// generated in parallel, each from its own random stream, so the output
/// depends only on `seed`. The returned dataset carries a split with
/// `cfg.val_fraction` of the contexts held out.
pub fn generate_expert(env: &Environment, robot: &RobotModel, cfg: &ExpertConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    robot.validate()?;
    let base = env.base();
    let suite = cfg.refinement_suite(&base, robot)?;
    let pre = GpPreconditioner::new(&suite, cfg.horizon)?;
    let outputs = (0..cfg.n_contexts)
        .into_par_iter()
        .map(|id| generate_context(&base, robot, cfg, &suite, &pre, seed, id))
        .collect::<Result<Vec<_>>>()?;
    let mut contexts = Vec::new();
    let mut trajectories = Vec::new();
    let mut provenance = Vec::new();
    let mut trajectory_context = Vec::new();
    for out in outputs {
        for (t, mut p) in out.trajectories.into_iter().zip(out.provenance) {
            p.index = trajectories.len();
            trajectory_context.push(out.context.id);
            trajectories.push(t);
            provenance.push(p);
        }
        contexts.push(out.context);
    }
    let normalizer = Normalizer::fit(trajectories.iter().map(|t| &t.states))?;
    let mut manifest = DatasetManifest {
        format_version: DATASET_VERSION,
        environment_hash: environment_hash(&base)?,
        robot: robot.clone(),
        horizon: cfg.horizon,
        state_dim: 2 * robot.dof(),
        dt: cfg.dt,
        n_contexts: cfg.n_contexts,
        n_per_context: cfg.n_per_context,
        n_trajectories: trajectories.len(),
        contexts,
        trajectory_context,
        normalizer,
        split: None,
        checksum: String::new(),
    };
    manifest.checksum = sha256_hex(&tensor_blob(&trajectories));
    let mut ds = Dataset {
        manifest,
        trajectories,
        provenance,
    };
    ds.manifest.split = Some(split(&ds, cfg.val_fraction, seed)?);
    Ok(ds)
}

/// Seeded shuffle of the context ids; `round(n·fraction)` contexts (at
/// least one, at most `n − 1`) go to validation.
pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<Split> {
    use rand::seq::SliceRandom;
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
    }
    let mut ids: Vec<usize> = dataset.manifest.contexts.iter().map(|c| c.id).collect();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 contexts to split, have {}", ids.len())));
    }
    let n_val = ((ids.len() as f64 * val_fraction).round() as usize).clamp(1, ids.len() - 1);
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_contexts = ids[..n_val].to_vec();
    let mut train_contexts = ids[n_val..].to_vec();
    val_contexts.sort_unstable();
    train_contexts.sort_unstable();
    Ok(Split {
        val_fraction,
        seed,
        train_contexts,
        val_contexts,
    })
}

fn tensor_blob(trajectories: &[Trajectory]) -> Vec<u8> {
    f32_blob(
        trajectories
            .iter()
            .flat_map(|t| (0..t.horizon()).flat_map(move |i| (0..t.state_dim()).map(move |j| t.states[(i, j)]))),
    )
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let blob = tensor_blob(&dataset.trajectories);
    let mut manifest = dataset.manifest.clone();
    manifest.n_trajectories = dataset.trajectories.len();
    manifest.checksum = sha256_hex(&blob);
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    std::fs::write(dir.join(TRAJECTORY_FILE), blob)?;
    let mut prov = String::new();
    for p in &dataset.provenance {
        prov.push_str(&serde_json::to_string(p)?);
        prov.push('\n');
    }
    std::fs::write(dir.join(PROVENANCE_FILE), prov)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != DATASET_VERSION {
        return Err(Error::Version {
            expected: DATASET_VERSION,
            found: manifest.format_version,
        });
    }
    let blob = std::fs::read(dir.join(TRAJECTORY_FILE))?;
    let found = sha256_hex(&blob);
    if found != manifest.checksum {
        return Err(Error::Checksum {
            expected: manifest.checksum.clone(),
            found,
        });
    }
    let (m, h, d) = (manifest.n_trajectories, manifest.horizon, manifest.state_dim);
    if blob.len() != m * h * d * 4 || manifest.trajectory_context.len() != m {
        return Err(Error::Corrupt(format!(
            "tensor holds {} bytes, manifest describes [{m}, {h}, {d}]",
            blob.len()
        )));
    }
    let values = read_f32_blob(&blob);
    let trajectories = values
        .chunks_exact(h * d)
        .map(|c| Trajectory::new(DMatrix::from_row_slice(h, d, c), manifest.dt))
        .collect::<Result<Vec<_>>>()?;
    let provenance = std::fs::read_to_string(dir.join(PROVENANCE_FILE))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<Vec<Provenance>>>()?;
    Ok(Dataset {
        manifest,
        trajectories,
        provenance,
    })
}
