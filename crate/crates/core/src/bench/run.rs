use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metric_intensity, metric_path_length, metric_success, metric_waypoint_variance, trajectory_free, Stat};
use crate::costs::{CostKind, CostSuite, CostTerm};
use crate::denoiser::{load_model, DenoiserModel};
use crate::diffusion::{mpd_sample, GuidanceConfig, SamplerSetup};
use crate::error::{Error, Result};
use crate::geometry::{sample_free_config, Environment, EnvironmentFile, RobotModel, DEFAULT_SAMPLE_BUDGET};
use crate::planners::{bspline_smooth, gpmp_with, rrt_connect, GpPreconditioner, GpmpParams, RrtParams};
use crate::trajectory::{straight_line_init, GpParams, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    /// Unguided samples of the diffusion model.
    DiffusionPrior,
    /// Cost-guided diffusion sampling.
    Mpd,
    /// GPMP from the constant-velocity straight line.
    Gpmp,
    /// RRT-Connect paths smoothed to the horizon.
    Rrt,
    /// GPMP started from the samples of `prior`.
    PrimedGpmp,
}

impl PlannerKind {
    pub fn needs_model(self, prior: PlannerKind) -> bool {
        match self {
            PlannerKind::DiffusionPrior | PlannerKind::Mpd => true,
            PlannerKind::PrimedGpmp => prior.needs_model(PlannerKind::Gpmp),
            PlannerKind::Gpmp | PlannerKind::Rrt => false,
        }
    }
}

fn default_guidance_costs() -> Vec<CostTerm> {
    vec![CostTerm::new(CostKind::Collision, 0.02)]
}

fn default_gpmp_costs() -> Vec<CostTerm> {
    vec![
        CostTerm::new(CostKind::Collision, 100.0),
        CostTerm::new(CostKind::GpSmoothness, 1.0),
    ]
}

/// One benchmark run. Paths are resolved relative to the config file when
/// loaded with [`RunConfig::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Environment + robot JSON written by `gen-env`.
    pub environment: PathBuf,
    /// Evaluate with the extra obstacles present.
    pub extra_obstacles: bool,
    pub planner: PlannerKind,
    /// Sample source for `primed-gpmp`.
    pub prior: PlannerKind,
    /// Denoiser checkpoint for diffusion-based planners.
    pub model: Option<PathBuf>,
    pub horizon: usize,
    pub dt: f64,
    pub guidance: GuidanceConfig,
    /// Terms steering the `mpd` sampler.
    pub guidance_costs: Vec<CostTerm>,
    /// Terms optimized by GPMP; must include `gp_smoothness`.
    pub gpmp_costs: Vec<CostTerm>,
    pub gp_qc: f64,
    pub rrt: RrtParams,
    pub gpmp: GpmpParams,
    pub batch_size: usize,
    pub n_contexts: usize,
    pub seed: u64,
    pub endpoint_margin: f64,
    pub min_endpoint_distance: f64,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            environment: PathBuf::from("env.json"),
            extra_obstacles: true,
            planner: PlannerKind::Mpd,
            prior: PlannerKind::DiffusionPrior,
            model: None,
            horizon: 64,
            dt: 0.05,
            guidance: GuidanceConfig::default(),
            guidance_costs: default_guidance_costs(),
            gpmp_costs: default_gpmp_costs(),
            gp_qc: 1.0,
            rrt: RrtParams::default(),
            gpmp: GpmpParams::default(),
            batch_size: 100,
            n_contexts: 20,
            seed: 0,
            endpoint_margin: 0.02,
            min_endpoint_distance: 0.8,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.environment = base.join(&cfg.environment);
        cfg.model = cfg.model.map(|m| base.join(m));
        cfg.output = cfg.output.map(|o| base.join(o));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_contexts == 0 {
            return Err(Error::Config("batch_size and n_contexts must be positive".into()));
        }
        if self.horizon < 3 || !(self.dt > 0.0) || !(self.gp_qc > 0.0) {
            return Err(Error::Config("horizon must be >= 3, dt and gp_qc positive".into()));
        }
        if self.planner == PlannerKind::PrimedGpmp && self.prior == PlannerKind::PrimedGpmp {
            return Err(Error::Config("primed-gpmp cannot prime itself".into()));
        }
        if self.planner.needs_model(self.prior) && self.model.is_none() {
            return Err(Error::Config(format!("planner {:?} needs a model checkpoint", self.planner)));
        }
        if !self.gpmp_costs.iter().any(|t| t.kind == CostKind::GpSmoothness) {
            return Err(Error::Config("gpmp_costs must include gp_smoothness".into()));
        }
        self.guidance.validate()?;
        self.rrt.validate()?;
        self.gpmp.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub seed: u64,
}

/// Everything a run needs after files are read.
pub struct BenchSetup {
    pub config: RunConfig,
    pub env: Environment,
    pub robot: RobotModel,
    pub model: Option<DenoiserModel>,
    guidance_suite: CostSuite,
    gpmp_suite: CostSuite,
}

impl BenchSetup {
    pub fn new(config: RunConfig, env_file: &EnvironmentFile, model: Option<DenoiserModel>) -> Result<Self> {
        config.validate()?;
        let env = if config.extra_obstacles {
            env_file.environment.clone()
        } else {
            env_file.environment.base()
        };
        let robot = env_file.robot.clone();
        let gp = GpParams::isotropic(config.dt, robot.dof(), config.gp_qc)?;
        if let Some(m) = &model {
            let want = (config.horizon, 2 * robot.dof());
            if (m.config.horizon, m.config.state_dim) != want {
                return Err(Error::Config(format!(
                    "model shape ({}, {}) does not match horizon/state ({}, {})",
                    m.config.horizon, m.config.state_dim, want.0, want.1
                )));
            }
        } else if config.planner.needs_model(config.prior) {
            return Err(Error::Config("planner needs a model".into()));
        }
        let guidance_suite = CostSuite::new(config.guidance_costs.clone(), env.clone(), robot.clone(), gp.clone())?;
        let gpmp_suite = CostSuite::new(config.gpmp_costs.clone(), env.clone(), robot.clone(), gp)?;
        Ok(BenchSetup {
            config,
            env,
            robot,
            model,
            guidance_suite,
            gpmp_suite,
        })
    }

    /// Reads the environment file and model named by the config.
    pub fn load(config: RunConfig) -> Result<Self> {
        let env_file = EnvironmentFile::load(&config.environment)?;
        let model = if config.planner.needs_model(config.prior) {
            let path = config.model.as_ref().ok_or_else(|| Error::Config("missing model path".into()))?;
            Some(load_model(path)?)
        } else {
            None
        };
        Self::new(config, &env_file, model)
    }

    /// `n_contexts` endpoint pairs, free in the evaluation environment.
    pub fn contexts(&self) -> Result<Vec<Context>> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::with_capacity(cfg.n_contexts);
        let mut draws = 0;
        while out.len() < cfg.n_contexts {
            draws += 1;
            if draws > 1000 * cfg.n_contexts {
                return Err(Error::SamplingExhausted(draws));
            }
            let start = sample_free_config(&self.env, &self.robot, cfg.endpoint_margin, DEFAULT_SAMPLE_BUDGET, &mut rng)?;
            let goal = sample_free_config(&self.env, &self.robot, cfg.endpoint_margin, DEFAULT_SAMPLE_BUDGET, &mut rng)?;
            let d = start.iter().zip(&goal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if d < cfg.min_endpoint_distance {
                continue;
            }
            out.push(Context {
                id: out.len(),
                start: start.into_iter().map(|v| v as f32 as f64).collect(),
                goal: goal.into_iter().map(|v| v as f32 as f64).collect(),
                seed: rng.random(),
            });
        }
        Ok(out)
    }

    fn full_state(&self, q: &[f64]) -> Vec<f64> {
        let mut s = q.to_vec();
        s.resize(2 * self.robot.dof(), 0.0);
        s
    }

    fn sample_diffusion(&self, ctx: &Context, guided: bool) -> Result<Vec<Trajectory>> {
        let model = self.model.as_ref().ok_or_else(|| Error::Config("planner needs a model".into()))?;
        let schedule = model.schedule.build()?;
        let setup = SamplerSetup {
            schedule: &schedule,
            guidance: &self.config.guidance,
            normalizer: &model.normalizer,
            suite: guided.then_some(&self.guidance_suite),
            dt: self.config.dt,
        };
        mpd_sample(&setup, model, &self.full_state(&ctx.start), &self.full_state(&ctx.goal), self.config.batch_size, ctx.seed)
    }

    fn sample_rrt(&self, ctx: &Context) -> Result<Vec<Trajectory>> {
        let out: Vec<Result<Trajectory>> = (0..self.config.batch_size)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
                rng.set_stream(b as u64);
                let path = rrt_connect(&self.env, &self.robot, &ctx.start, &ctx.goal, &self.config.rrt, &mut rng)?;
                bspline_smooth(&path, self.config.horizon, self.config.dt)
            })
            .collect();
        keep_successes(out)
    }

    fn optimize(&self, inits: Vec<Trajectory>) -> Result<Vec<Trajectory>> {
        let pre = GpPreconditioner::new(&self.gpmp_suite, self.config.horizon)?;
        let out: Vec<Result<Trajectory>> = inits
            .par_iter()
            .map(|t| gpmp_with(t, &self.gpmp_suite, &self.config.gpmp, &pre).map(|r| r.trajectory))
            .collect();
        keep_successes(out)
    }

    fn sample_kind(&self, kind: PlannerKind, ctx: &Context) -> Result<Vec<Trajectory>> {
        match kind {
            PlannerKind::DiffusionPrior => self.sample_diffusion(ctx, false),
            PlannerKind::Mpd => self.sample_diffusion(ctx, true),
            PlannerKind::Rrt => self.sample_rrt(ctx),
            PlannerKind::Gpmp => {
                let line = straight_line_init(&ctx.start, &ctx.goal, self.config.horizon, self.config.dt)?;
                let opt = self.optimize(vec![line])?;
                Ok(vec![opt[0].clone(); self.config.batch_size])
            }
            PlannerKind::PrimedGpmp => {
                let prior = match self.config.prior {
                    // a straight line prior is deterministic; optimize it once
                    PlannerKind::Gpmp => return self.sample_kind(PlannerKind::Gpmp, ctx),
                    p => self.sample_kind(p, ctx)?,
                };
                self.optimize(prior)
            }
        }
    }

    /// One batch of trajectories from the configured planner.
    pub fn plan(&self, ctx: &Context) -> Result<Vec<Trajectory>> {
        self.sample_kind(self.config.planner, ctx)
    }
}

fn keep_successes(out: Vec<Result<Trajectory>>) -> Result<Vec<Trajectory>> {
    let mut ok = Vec::with_capacity(out.len());
    let mut last_err = None;
    for r in out {
        match r {
            Ok(t) => ok.push(t),
            Err(e @ (Error::PlannerFailure(_) | Error::NonFinite(_))) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::PlannerFailure("no trajectories".into())));
    }
    Ok(ok)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRow {
    pub context: usize,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub time_s: f64,
    pub n_trajectories: usize,
    pub success: u8,
    pub intensity: Option<f64>,
    /// Mean over collision-free trajectories, or over the batch when none is free.
    pub path_length: Option<f64>,
    /// Over collision-free trajectories when at least two are free, else over the batch.
    pub waypoint_variance: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub planner: PlannerKind,
    pub prior: Option<PlannerKind>,
    pub extra_obstacles: bool,
    pub batch_size: usize,
    pub n_contexts: usize,
    pub seed: u64,
    pub rows: Vec<ContextRow>,
    pub time_s: Stat,
    pub success: Stat,
    pub intensity: Stat,
    pub path_length: Stat,
    pub waypoint_variance: Stat,
}

impl MetricReport {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> MetricReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.time_s = 0.0;
        }
        r.time_s = Stat::of(std::iter::empty());
        r
    }
}

pub struct BenchOutcome {
    pub report: MetricReport,
    pub contexts: Vec<Context>,
    pub batches: Vec<Option<Vec<Trajectory>>>,
}

pub fn evaluate_batch(ctx: &Context, batch: &[Trajectory], env: &Environment, robot: &RobotModel, time_s: f64) -> Result<ContextRow> {
    let free: Vec<Trajectory> = batch.iter().filter(|t| trajectory_free(env, robot, t)).cloned().collect();
    let pool = if free.is_empty() { batch } else { &free[..] };
    let path_length = pool.iter().map(metric_path_length).sum::<f64>() / pool.len() as f64;
    let var_pool = if free.len() >= 2 { &free[..] } else { batch };
    let waypoint_variance = if var_pool.len() >= 2 {
        Some(metric_waypoint_variance(var_pool)?)
    } else {
        None
    };
    Ok(ContextRow {
        context: ctx.id,
        start: ctx.start.clone(),
        goal: ctx.goal.clone(),
        time_s,
        n_trajectories: batch.len(),
        success: metric_success(batch, env, robot)?,
        intensity: Some(metric_intensity(batch, env, robot)?),
        path_length: Some(path_length),
        waypoint_variance,
        failure: None,
    })
}

/// Plans every context, scores each batch and aggregates. Planner failures
/// are recorded in their row (success 0) and the run continues.
pub fn run_benchmark(setup: &BenchSetup) -> Result<BenchOutcome> {
    let contexts = setup.contexts()?;
    let results: Vec<Result<(ContextRow, Option<Vec<Trajectory>>)>> = contexts
        .par_iter()
        .map(|ctx| {
            let t0 = Instant::now();
            match setup.plan(ctx) {
                Ok(batch) => {
                    let dt = t0.elapsed().as_secs_f64();
                    let row = evaluate_batch(ctx, &batch, &setup.env, &setup.robot, dt)?;
                    Ok((row, Some(batch)))
                }
                Err(e @ (Error::PlannerFailure(_) | Error::NonFinite(_))) => Ok((
                    ContextRow {
                        context: ctx.id,
                        start: ctx.start.clone(),
                        goal: ctx.goal.clone(),
                        time_s: t0.elapsed().as_secs_f64(),
                        n_trajectories: 0,
                        success: 0,
                        intensity: None,
                        path_length: None,
                        waypoint_variance: None,
                        failure: Some(e.to_string()),
                    },
                    None,
                )),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(contexts.len());
    let mut batches = Vec::with_capacity(contexts.len());
    for r in results {
        let (row, batch) = r?;
        rows.push(row);
        batches.push(batch);
    }
    let cfg = &setup.config;
    let report = MetricReport {
        planner: cfg.planner,
        prior: (cfg.planner == PlannerKind::PrimedGpmp).then_some(cfg.prior),
        extra_obstacles: cfg.extra_obstacles,
        batch_size: cfg.batch_size,
        n_contexts: cfg.n_contexts,
        seed: cfg.seed,
        time_s: Stat::of(rows.iter().map(|r| r.time_s)),
        success: Stat::of(rows.iter().map(|r| r.success as f64)),
        intensity: Stat::of(rows.iter().filter_map(|r| r.intensity)),
        path_length: Stat::of(rows.iter().filter_map(|r| r.path_length)),
        waypoint_variance: Stat::of(rows.iter().filter_map(|r| r.waypoint_variance)),
        rows,
    };
    Ok(BenchOutcome {
        report,
        contexts,
        batches,
    })
}

/// Planned batches as written by `plan` and read by `render`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub dt: f64,
    pub records: Vec<PlanRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub context: Context,
    /// Row-major states of each trajectory.
    pub trajectories: Vec<Vec<Vec<f64>>>,
    pub failure: Option<String>,
}

impl PlanFile {
    pub fn from_outcome(dt: f64, outcome: &BenchOutcome) -> Self {
        let records = outcome
            .contexts
            .iter()
            .zip(&outcome.batches)
            .zip(&outcome.report.rows)
            .map(|((ctx, batch), row)| PlanRecord {
                context: ctx.clone(),
                trajectories: batch.iter().flatten().map(|t| t.rows()).collect(),
                failure: row.failure.clone(),
            })
            .collect();
        PlanFile { dt, records }
    }

    pub fn trajectories(&self, record: usize) -> Result<Vec<Trajectory>> {
        let rec = self
            .records
            .get(record)
            .ok_or_else(|| Error::InvalidArgument(format!("no plan record {record}")))?;
        rec.trajectories.iter().map(|rows| Trajectory::from_rows(rows, self.dt)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
