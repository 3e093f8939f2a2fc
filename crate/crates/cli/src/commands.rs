use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use mpd_core::bench::{render_svg, run_benchmark, BenchSetup, PlanFile, RunConfig};
use mpd_core::dataset::{generate_expert, load_dataset, save_dataset, split};
use mpd_core::denoiser::{save_model, train, DenoiserConfig, DenoiserModel};
use mpd_core::geometry::EnvironmentFile;
use mpd_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{read_json, GenDataConfig, GenEnvConfig, RenderConfig, TrainRunConfig};

pub const ENV_FILE: &str = "env.json";
pub const MODEL_FILE: &str = "model.bin";
pub const PLANS_FILE: &str = "plans.json";
pub const REPORT_FILE: &str = "report.json";

/// Any failure while reading inputs counts as a configuration error.
fn input<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn gen_env(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let mut cfg: GenEnvConfig = read_json(config)?;
    cfg.generator.seed = seed;
    let robot = cfg.robot.build(cfg.generator.workspace_bounds)?;
    let environment = cfg.generator.generate()?;
    let file = EnvironmentFile {
        environment,
        robot,
        seed: Some(seed),
    };
    file.save(&out.join(ENV_FILE))?;
    render_svg(&[], &file.environment, &file.robot, &out.join("env.svg"))?;
    eprintln!(
        "environment: {} base + {} extra obstacles",
        file.environment.primitives.len(),
        file.environment.extra_primitives.len()
    );
    Ok(())
}

pub fn gen_data(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let cfg = GenDataConfig::load(config)?;
    let env_file = input(EnvironmentFile::load(&cfg.environment))?;
    let dataset = generate_expert(&env_file.environment, &env_file.robot, &cfg.expert, seed)?;
    save_dataset(&dataset, out)?;
    eprintln!(
        "dataset: {} trajectories over {} contexts, checksum {}",
        dataset.manifest.n_trajectories, dataset.manifest.n_contexts, dataset.manifest.checksum
    );
    Ok(())
}

pub fn train_model(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = TrainRunConfig::load(config)?;
    cfg.train.seed = seed;
    let dataset = input(load_dataset(&cfg.dataset))?;
    let m = &dataset.manifest;
    let model_cfg = cfg
        .model
        .clone()
        .unwrap_or_else(|| DenoiserConfig::for_shape(m.horizon, m.state_dim, cfg.width));
    if (model_cfg.horizon, model_cfg.state_dim) != (m.horizon, m.state_dim) {
        return Err(Error::Config(format!(
            "model shape ({}, {}) does not match dataset ({}, {})",
            model_cfg.horizon, model_cfg.state_dim, m.horizon, m.state_dim
        )));
    }
    let split = match &m.split {
        Some(s) => s.clone(),
        None => split(&dataset, 0.05, seed)?,
    };
    let normalized = dataset.normalized();
    let pick = |ctx: &[usize]| -> Vec<_> { dataset.indices_of(ctx).into_iter().map(|i| normalized[i].clone()).collect() };
    let (train_set, val_set) = (pick(&split.train_contexts), pick(&split.val_contexts));

    let schedule = cfg.schedule.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = input(DenoiserModel::new(model_cfg, m.normalizer.clone(), cfg.schedule.clone(), &mut rng))?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let model_path = out.join(MODEL_FILE);
    let report = train(&train_set, &val_set, &schedule, &mut model, &cfg.train, Some(&mut log), Some(&model_path))?;
    save_model(&model, &model_path)?;
    write_json(&report, &out.join("train_report.json"))?;
    eprintln!(
        "trained {} steps on {} trajectories, best validation loss {:?}",
        report.steps,
        train_set.len(),
        report.best_val_loss
    );
    Ok(())
}

fn bench_setup(config: &Path, seed: u64) -> Result<BenchSetup> {
    let mut cfg = RunConfig::load(config).map_err(|e| Error::Config(e.to_string()))?;
    cfg.seed = seed;
    input(BenchSetup::load(cfg))
}

/// Plans every context and writes the batches. A context whose planner
/// failed is recorded and makes the command fail after all files are written.
pub fn plan(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let setup = bench_setup(config, seed)?;
    let outcome = run_benchmark(&setup)?;
    PlanFile::from_outcome(setup.config.dt, &outcome).save(&out.join(PLANS_FILE))?;
    write_json(&outcome.report, &out.join(REPORT_FILE))?;
    let failed: Vec<String> = outcome
        .report
        .rows
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| format!("context {}: {f}", r.context)))
        .collect();
    eprintln!("planned {} contexts, {} failed", outcome.report.rows.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::PlannerFailure(failed.join("; ")))
    }
}

/// Benchmark report only; per-context failures are part of the report.
pub fn bench(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let setup = bench_setup(config, seed)?;
    let outcome = run_benchmark(&setup)?;
    let r = &outcome.report;
    write_json(r, &out.join(REPORT_FILE))?;
    eprintln!(
        "{:?}: success {:.3}±{:.3}, intensity {:.4}±{:.4}, path length {:.3}±{:.3}, variance {:.3}±{:.3}",
        r.planner,
        r.success.mean,
        r.success.std,
        r.intensity.mean,
        r.intensity.std,
        r.path_length.mean,
        r.path_length.std,
        r.waypoint_variance.mean,
        r.waypoint_variance.std
    );
    Ok(())
}

/// One SVG per plan record. The seed is accepted for a uniform surface;
/// rendering is deterministic.
pub fn render(config: &Path, _seed: u64, out: &Path) -> Result<()> {
    let cfg = RenderConfig::load(config)?;
    let env_file = input(EnvironmentFile::load(&cfg.environment))?;
    let plans = input(PlanFile::load(&cfg.plans))?;
    let env = if cfg.extra_obstacles {
        env_file.environment.clone()
    } else {
        env_file.environment.base()
    };
    let records = cfg.records.clone().unwrap_or_else(|| (0..plans.records.len()).collect());
    for i in records {
        let batch = input(plans.trajectories(i))?;
        let id = plans.records[i].context.id;
        render_svg(&batch, &env, &env_file.robot, &out.join(format!("context_{id:03}.svg")))
            .map_err(|e| match e {
                Error::Unsupported(_) => Error::Config(e.to_string()),
                other => other,
            })?;
    }
    Ok(())
}
