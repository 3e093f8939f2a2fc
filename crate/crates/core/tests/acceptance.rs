//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero when any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use mpd_core::bench::{
    metric_intensity, metric_path_length, metric_success, metric_waypoint_variance, run_benchmark, BenchOutcome, BenchSetup,
    PlannerKind, RunConfig,
};
use mpd_core::costs::{collision_cost, ee_trajectory_cost, joint_limits_cost, self_collision_cost};
use mpd_core::dataset::{generate_expert, load_dataset, save_dataset, ExpertConfig};
use mpd_core::denoiser::{train, DenoiserConfig, DenoiserModel, LossProbe, TrainConfig};
use mpd_core::diffusion::{
    forward_sample, forward_step, guided_reverse_step, mpd_sample, standard_normal, GuidanceConfig, Normalizer, SamplerSetup,
    ScheduleConfig,
};
use mpd_core::geometry::{Bounds, EnvGenConfig, Environment, EnvironmentFile};
use mpd_core::trajectory::straight_line_init;
use mpd_core::{GpParams, RobotModel, SdfPrimitive, Trajectory};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------- helpers

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

const FD_STEP: f64 = 1e-6;

fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += FD_STEP;
            m[i] -= FD_STEP;
            (f(&p) - f(&m)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Draws points until `n` of them have a non-zero cost, then checks the
/// analytic gradient at each. Returns the worst relative error.
fn gradient_family(
    n: usize,
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for _ in 0..200_000 {
        let x = draw(rng);
        let (c, g) = f(&x);
        if c == 0.0 {
            continue;
        }
        let fd = central_diff(&x, |y| f(y).0);
        worst = worst.max(rel_err(&g, &fd));
        active += 1;
        if active == n {
            return Ok(worst);
        }
    }
    Err(format!("only {active} active points found"))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn states(x: &[f64], h: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(h, d, x)
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn scene() -> (Environment, RobotModel) {
    (
        EnvGenConfig::default().generate().unwrap(),
        RobotModel::point_mass(Bounds::default(), 0.02, 2.0),
    )
}

/// Signed distance written out independently of the library.
fn brute_sdf(prims: &[SdfPrimitive], p: [f64; 2]) -> f64 {
    prims
        .iter()
        .map(|s| match s {
            SdfPrimitive::Sphere { center, radius } => ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt() - radius,
            SdfPrimitive::Box { center, half_extents } => {
                let qx = (p[0] - center[0]).abs() - half_extents[0];
                let qy = (p[1] - center[1]).abs() - half_extents[1];
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                outside + qx.max(qy).min(0.0)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

fn brute_point_collides(env: &Environment, radius: f64, p: [f64; 2]) -> bool {
    let all: Vec<SdfPrimitive> = env.all_primitives().cloned().collect();
    brute_sdf(&all, p) <= radius
}

// ------------------------------------------------------------- criteria

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (env, point) = scene();
    let arm = RobotModel::planar_arm(&[0.4, 0.3, 0.25]);
    let arm4 = RobotModel::planar_arm(&[0.3, 0.3, 0.3, 0.3]);
    let pi = std::f64::consts::PI;
    let mut report = Vec::new();

    let w = gradient_family(100, &mut rng, |r| uniform(r, 2, -1.0, 1.0), |q| collision_cost(&env, &point, q, 0.03).unwrap())?;
    report.push(("collision/point", w));
    let w = gradient_family(100, &mut rng, |r| uniform(r, 3, -pi, pi), |q| collision_cost(&env, &arm, q, 0.03).unwrap())?;
    report.push(("collision/arm", w));
    let w = gradient_family(100, &mut rng, |r| uniform(r, 4, -pi, pi), |q| self_collision_cost(&arm4, q, 0.02).unwrap())?;
    report.push(("self-collision", w));
    let w = gradient_family(
        100,
        &mut rng,
        |r| {
            let mut x = uniform(r, 3, -1.2 * pi, 1.2 * pi);
            x.extend(uniform(r, 3, -2.4, 2.4));
            x
        },
        |x| {
            let (c, gq, gv) = joint_limits_cost(&arm, &x[..3], &x[3..], 0.01).unwrap();
            (c, [gq, gv].concat())
        },
    )?;
    report.push(("joint-limits", w));
    let heading = 0.7;
    let w = gradient_family(
        100,
        &mut rng,
        |r| uniform(r, 8 * 6, -pi, pi),
        |x| {
            let traj = Trajectory::new(states(x, 8, 6), 0.1).unwrap();
            let (c, g) = ee_trajectory_cost(&arm, &traj, heading).unwrap();
            (c, flat(&g))
        },
    )?;
    report.push(("end-effector", w));
    let gp = GpParams::isotropic(0.1, 2, 0.5).unwrap();
    let w = gradient_family(
        100,
        &mut rng,
        |r| uniform(r, 10 * 4, -1.0, 1.0),
        |x| {
            let traj = Trajectory::new(states(x, 10, 4), 0.1).unwrap();
            (gp.cost(&traj).unwrap(), flat(&gp.cost_grad(&traj).unwrap()))
        },
    )?;
    report.push(("gp", w));

    let mut model = DenoiserModel::new(DenoiserConfig::for_shape(8, 2, 8), Normalizer::identity(2), ScheduleConfig::default(), &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        model.params = uniform(&mut rng, model.params.len(), -0.5, 0.5);
        let x = standard_normal(8, 2, &mut rng);
        let up = standard_normal(8, 2, &mut rng);
        let t = rng.random_range(1..=25);
        let g = mpd_core::diffusion::Denoiser::backprop(&model, &x, t, &up).unwrap();
        let coords: Vec<usize> = (0..10).map(|_| rng.random_range(0..model.params.len())).collect();
        let fd: Vec<f64> = coords
            .iter()
            .map(|&i| {
                let mut m = model.clone();
                m.params[i] += FD_STEP;
                let fp = m.eps_predict(&x, t).unwrap().dot(&up);
                m.params[i] -= 2.0 * FD_STEP;
                let fm = m.eps_predict(&x, t).unwrap().dot(&up);
                (fp - fm) / (2.0 * FD_STEP)
            })
            .collect();
        let ga: Vec<f64> = coords.iter().map(|&i| g[i]).collect();
        worst = worst.max(rel_err(&ga, &fd));
    }
    report.push(("denoiser", worst));

    let secs = t0.elapsed().as_secs_f64();
    let summary = report.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    for (name, w) in &report {
        check(*w < 1e-4, format!("{name} relative error {w:.2e}; {summary}"))?;
    }
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("100 points each, worst relative error: {summary}; {secs:.1} s"))
}

fn gaussian_product_guidance() -> Outcome {
    let t0 = Instant::now();
    let s = ScheduleConfig::default().build().unwrap();
    let guidance = GuidanceConfig {
        drop_sigma_scaling: false,
        ..Default::default()
    };
    let t = 10;
    let sigma2 = s.sigma_at(t).powi(2);
    let mu = DMatrix::from_row_slice(1, 3, &[0.4, -1.1, 2.0]);
    // log p(y|τ) = a·τ has gradient a everywhere.
    let a = DMatrix::from_row_slice(1, 3, &[1.5, -0.8, 0.0]);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let z = standard_normal(1, 3, &mut rng);
        let x = guided_reverse_step(&s, &guidance, &mu, &a, t, &z, None).unwrap();
        for j in 0..3 {
            sum[j] += x[j];
            sq[j] += x[j] * x[j];
        }
    }
    let nf = n as f64;
    let mut worst: f64 = 0.0;
    for j in 0..3 {
        // N(μ, σ²) · exp(a τ) ∝ N(μ + σ² a, σ²)
        let (m_true, v_true) = (mu[j] + sigma2 * a[j], sigma2);
        let mean = sum[j] / nf;
        let var = sq[j] / nf - mean * mean;
        let zm = (mean - m_true) / (v_true / nf).sqrt();
        let zv = (var - v_true) / (v_true * (2.0 / (nf - 1.0)).sqrt());
        worst = worst.max(zm.abs()).max(zv.abs());
        check(zm.abs() < 3.0 && zv.abs() < 3.0, format!("dim {j}: mean z {zm:.2}, variance z {zv:.2}"))?;
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("1e5 samples at t={t}, worst |z| {worst:.2}; {secs:.1} s"))
}

fn forward_kernel_equivalence() -> Outcome {
    let t0 = Instant::now();
    let s = ScheduleConfig::default().build().unwrap();
    let tau0 = DMatrix::from_row_slice(1, 2, &[1.5, -0.7]);
    let n = 100_000;
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for t in [1usize, 5, 25] {
        let (mut s1, mut q1, mut s2, mut q2) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let direct = forward_sample(&s, &tau0, t, &standard_normal(1, 2, &mut rng)).unwrap();
            let mut chain = tau0.clone();
            for k in 1..=t {
                chain = forward_step(&s, &chain, k, &standard_normal(1, 2, &mut rng)).unwrap();
            }
            for j in 0..2 {
                s1[j] += direct[j];
                q1[j] += direct[j] * direct[j];
                s2[j] += chain[j];
                q2[j] += chain[j] * chain[j];
            }
        }
        for j in 0..2 {
            let (m1, m2) = (s1[j] / nf, s2[j] / nf);
            let (v1, v2) = (q1[j] / nf - m1 * m1, q2[j] / nf - m2 * m2);
            let zm = (m1 - m2) / ((v1 + v2) / nf).sqrt();
            let zv = (v1 - v2) / ((v1 * v1 + v2 * v2) * 2.0 / (nf - 1.0)).sqrt();
            worst = worst.max(zm.abs()).max(zv.abs());
            check(zm.abs() < 3.0 && zv.abs() < 3.0, format!("t={t} dim {j}: mean z {zm:.2}, variance z {zv:.2}"))?;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("t in {{1, 5, 25}}, 1e5 samples each, worst |z| {worst:.2}; {secs:.1} s"))
}

fn gp_zero_family() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dof = rng.random_range(1..=4);
        let h = rng.random_range(2..=64);
        let dt = rng.random_range(0.01..0.5);
        let qc = rng.random_range(0.1..5.0);
        let traj = straight_line_init(&uniform(&mut rng, dof, -2.0, 2.0), &uniform(&mut rng, dof, -2.0, 2.0), h, dt).unwrap();
        let c = GpParams::isotropic(dt, dof, qc).unwrap().cost(&traj).unwrap();
        worst = worst.max(c.abs());
    }
    check(worst <= 1e-12, format!("straight-line cost {worst:.2e}"))?;
    let gp = GpParams::isotropic(1.0, 1, 1.0).unwrap();
    let one = Trajectory::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), 1.0).unwrap();
    let c = gp.cost(&one).unwrap();
    check(c == 6.0, format!("single transition cost {c}"))?;
    Ok(format!("100 lines, max cost {worst:.1e}; single transition {c}"))
}

fn overfit_smoke() -> Outcome {
    let t0 = Instant::now();
    let h = 32;
    let raw = DMatrix::from_fn(h, 4, |i, j| {
        let s = i as f64 / (h - 1) as f64;
        match j {
            0 => -0.8 + 1.6 * s,
            1 => 0.6 * (3.0 * s).sin(),
            2 => 1.6,
            _ => 1.8 * (3.0 * s).cos(),
        }
    });
    let norm = Normalizer::fit([&raw]).unwrap();
    let data = vec![norm.normalize(&raw)];
    let sched = ScheduleConfig::default();
    let s = sched.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = DenoiserModel::new(DenoiserConfig::for_shape(h, 4, 32), norm.clone(), sched, &mut rng).unwrap();
    let probe = LossProbe::new(&s, &data, 256, 1);
    let before = probe.evaluate(&s, &model, &data).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 32,
        max_steps: 2000,
        steps_per_epoch: 250,
        patience: 100,
        ..Default::default()
    };
    train(&data, &[], &s, &mut model, &cfg, None, None).unwrap();
    let after = probe.evaluate(&s, &model, &data).unwrap();
    let ratio = after / before;

    let guidance = GuidanceConfig::default();
    let setup = SamplerSetup {
        schedule: &s,
        guidance: &guidance,
        normalizer: &norm,
        suite: None,
        dt: 0.05,
    };
    let start: Vec<f64> = raw.row(0).iter().copied().collect();
    let goal: Vec<f64> = raw.row(h - 1).iter().copied().collect();
    let samples = mpd_sample(&setup, &model, &start, &goal, 10, 11).unwrap();
    let range: Vec<f64> = norm.max.iter().zip(&norm.min).map(|(a, b)| a - b).collect();
    let mut worst: f64 = 0.0;
    for tr in &samples {
        for i in 0..h {
            for j in 0..4 {
                // constant dimensions have no range; measure them absolutely
                let r = if range[j] > 0.0 { range[j] } else { 1.0 };
                worst = worst.max((tr.states[(i, j)] - raw[(i, j)]).abs() / r);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!("loss ratio {:.3}%, worst waypoint error {:.2}% of range, {secs:.0} s", 100.0 * ratio, 100.0 * worst);
    check(ratio < 0.01, detail.clone())?;
    check(worst <= 0.05, detail.clone())?;
    check(secs < 300.0, detail.clone())?;
    Ok(detail)
}

struct DeskRun {
    mpd: BenchOutcome,
    secs: f64,
    lines: Vec<String>,
    failures: Vec<String>,
}

fn desk_scale() -> DeskRun {
    let t0 = Instant::now();
    let (env, robot) = scene();
    let expert = ExpertConfig {
        horizon: 64,
        ..Default::default()
    };
    let ds = generate_expert(&env, &robot, &expert, 0).unwrap();
    let split = ds.manifest.split.clone().unwrap();
    let norm = ds.normalized();
    let pick = |c: &[usize]| -> Vec<DMatrix<f64>> { ds.indices_of(c).into_iter().map(|i| norm[i].clone()).collect() };
    let (tr, va) = (pick(&split.train_contexts), pick(&split.val_contexts));
    let sched = ScheduleConfig::default();
    let s = sched.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = DenoiserModel::new(DenoiserConfig::for_shape(64, 4, 32), ds.manifest.normalizer.clone(), sched, &mut rng).unwrap();
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        max_steps: 4000,
        steps_per_epoch: 250,
        patience: 100,
        ..Default::default()
    };
    train(&tr, &va, &s, &mut model, &tc, None, None).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();

    let file = EnvironmentFile {
        environment: env,
        robot,
        seed: Some(0),
    };
    let run = |planner: PlannerKind| {
        let cfg = RunConfig {
            planner,
            model: Some("in-memory".into()),
            ..Default::default()
        };
        run_benchmark(&BenchSetup::new(cfg, &file, Some(model.clone())).unwrap()).unwrap()
    };
    let prior = run(PlannerKind::DiffusionPrior);
    let mpd = run(PlannerKind::Mpd);
    let primed = run(PlannerKind::PrimedGpmp);
    let line = run(PlannerKind::Gpmp);
    let secs = t0.elapsed().as_secs_f64();

    let (p, m) = (&prior.report, &mpd.report);
    let (pg, lg) = (&primed.report, &line.report);
    let mut failures = Vec::new();
    if m.success.mean < p.success.mean {
        failures.push("(a) mpd success below prior".into());
    }
    if m.intensity.mean > p.intensity.mean {
        failures.push("(b) mpd intensity above prior".into());
    }
    if pg.success.mean < lg.success.mean {
        failures.push("(c) primed gpmp success below straight-line gpmp".into());
    }
    if secs >= 1800.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    let lines = vec![
        format!(
            "{} trajectories, training {train_secs:.0} s, total {secs:.0} s; {} contexts x batch {}",
            ds.trajectories.len(),
            m.n_contexts,
            m.batch_size
        ),
        format!(
            "success prior {:.2} mpd {:.2} | intensity prior {:.4} mpd {:.4} | success diffusion-gpmp {:.2} line-gpmp {:.2}",
            p.success.mean, m.success.mean, p.intensity.mean, m.intensity.mean, pg.success.mean, lg.success.mean
        ),
    ];
    DeskRun {
        mpd,
        secs,
        lines,
        failures,
    }
}

fn endpoint_invariant(run: &DeskRun) -> Outcome {
    let mut n = 0;
    for (ctx, batch) in run.mpd.contexts.iter().zip(&run.mpd.batches) {
        let batch = batch.as_ref().ok_or(format!("context {} produced no batch", ctx.id))?;
        let dof = ctx.start.len();
        let full = |q: &[f64]| [q.to_vec(), vec![0.0; dof]].concat();
        let (start, goal) = (full(&ctx.start), full(&ctx.goal));
        for tr in batch {
            let h = tr.horizon();
            for j in 0..2 * dof {
                check(
                    tr.states[(0, j)].to_bits() == start[j].to_bits() && tr.states[(h - 1, j)].to_bits() == goal[j].to_bits(),
                    format!("context {} endpoint mismatch in column {j}", ctx.id),
                )?;
            }
            n += 1;
        }
    }
    Ok(format!("{n} mpd trajectories with bit-exact start and goal rows"))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..1000 {
        let prims: Vec<SdfPrimitive> = (0..rng.random_range(1..4))
            .map(|_| {
                let c = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
                if rng.random_bool(0.5) {
                    SdfPrimitive::sphere(c, rng.random_range(0.05..0.4))
                } else {
                    SdfPrimitive::aabb(c, [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)])
                }
            })
            .collect();
        let env = Environment::new(Bounds::default(), prims, vec![]).unwrap();
        let radius = rng.random_range(0.0..0.1);
        let robot = RobotModel::point_mass(Bounds::default(), radius, 2.0);
        let (b, h) = (rng.random_range(2..6), rng.random_range(2..8));
        let batch: Vec<Trajectory> = (0..b)
            .map(|_| Trajectory::new(DMatrix::from_fn(h, 4, |_, _| rng.random_range(-1.0..1.0)), 0.1).unwrap())
            .collect();
        let pos = |t: &Trajectory, i: usize| [t.states[(i, 0)], t.states[(i, 1)]];

        let hits: Vec<Vec<bool>> = batch
            .iter()
            .map(|t| (0..h).map(|i| brute_point_collides(&env, radius, pos(t, i))).collect())
            .collect();
        let success = hits.iter().any(|row| row.iter().all(|c| !c)) as u8;
        let intensity = hits.iter().flatten().filter(|c| **c).count() as f64 / (b * h) as f64;
        check(metric_success(&batch, &env, &robot).unwrap() == success, format!("batch {k}: success"))?;
        check(
            (metric_intensity(&batch, &env, &robot).unwrap() - intensity).abs() < 1e-15,
            format!("batch {k}: intensity"),
        )?;
        for t in &batch {
            let mut len = 0.0;
            for i in 1..h {
                let (a, c) = (pos(t, i - 1), pos(t, i));
                len += ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)).sqrt();
            }
            check((metric_path_length(t) - len).abs() < 1e-12, format!("batch {k}: path length"))?;
        }
        let mut var = 0.0;
        for i in 0..h {
            let mut d = Vec::new();
            for x in 0..b {
                for y in x + 1..b {
                    let (p, q) = (pos(&batch[x], i), pos(&batch[y], i));
                    d.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                }
            }
            let m = d.iter().sum::<f64>() / d.len() as f64;
            var += d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64;
        }
        check(
            (metric_waypoint_variance(&batch).unwrap() - var).abs() < 1e-12,
            format!("batch {k}: waypoint variance"),
        )?;
    }
    let rows = |p: &[[f64; 2]]| {
        let mut s = DMatrix::zeros(p.len(), 4);
        for (i, q) in p.iter().enumerate() {
            s[(i, 0)] = q[0];
            s[(i, 1)] = q[1];
        }
        Trajectory::new(s, 0.1).unwrap()
    };
    // distances 1, 3, 2 at t=0 and 2, 0, 2 at t=1
    let hand = [
        rows(&[[0.0, 0.0], [1.0, 0.0]]),
        rows(&[[0.0, 1.0], [1.0, 2.0]]),
        rows(&[[0.0, 3.0], [1.0, 0.0]]),
    ];
    let v = metric_waypoint_variance(&hand).unwrap();
    let want = 2.0 / 3.0 + 8.0 / 9.0;
    check((v - want).abs() < 1e-15, format!("hand example {v} vs {want}"))?;
    Ok(format!("1000 random batches agree with brute force; hand example {v:.6}"))
}

fn pipeline_validity() -> Outcome {
    let (env, robot) = scene();
    let cfg = ExpertConfig {
        n_contexts: 20,
        n_per_context: 5,
        horizon: 32,
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        save_dataset(&generate_expert(&env, &robot, &cfg, 5).unwrap(), d.path()).unwrap();
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        check(a == b, format!("{} differs between reruns", name.to_string_lossy()))?;
    }
    let ds = load_dataset(dirs[0].path()).unwrap();
    let base = env.base();
    let radius = robot.collision_spheres[0].radius;
    let mut checks = 0usize;
    for (k, t) in ds.trajectories.iter().enumerate() {
        for i in 1..t.horizon() {
            let (a, b) = ([t.states[(i - 1, 0)], t.states[(i - 1, 1)]], [t.states[(i, 0)], t.states[(i, 1)]]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let n = (len / 1e-3).ceil().max(1.0) as usize;
            for s in 0..=n {
                let u = s as f64 / n as f64;
                let p = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
                check(!brute_point_collides(&base, radius, p), format!("trajectory {k} collides near waypoint {i}"))?;
                let inside = p.iter().all(|v| (-1.0..=1.0).contains(v));
                check(inside, format!("trajectory {k} leaves the workspace"))?;
                checks += 1;
            }
        }
    }
    Ok(format!(
        "{} trajectories, {checks} dense points clear; {} files byte-identical across reruns",
        ds.trajectories.len(),
        names.len()
    ))
}

// ---------------------------------------------------------------- driver

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn desk_and_endpoints(record: &mut impl FnMut(usize, &'static str, Outcome)) {
    match catch_unwind(desk_scale) {
        Ok(run) => {
            let six = if run.failures.is_empty() {
                Ok(format!("{} ({:.0} s)", run.lines.join("; "), run.secs))
            } else {
                Err(format!("{}; {}", run.failures.join(", "), run.lines.join("; ")))
            };
            record(6, "desk-scale reproduction", six);
            record(7, "endpoint invariant", guarded(|| endpoint_invariant(&run)));
        }
        Err(_) => {
            record(6, "desk-scale reproduction", Err("panicked".into()));
            record(7, "endpoint invariant", Err("no mpd runs".into()));
        }
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    // numeric arguments select criteria; none runs all of them
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| only.is_empty() || only.contains(&n);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n, name, r: Outcome| {
        println!("{} criterion {n} {name}: {}", if r.is_ok() { "PASS" } else { "FAIL" }, r.as_ref().unwrap_or_else(|e| e));
        results.push((n, name, r));
    };
    if want(1) {
        record(1, "gradient suite", guarded(gradient_suite));
    }
    if want(2) {
        record(2, "gaussian-product guidance", guarded(gaussian_product_guidance));
    }
    if want(3) {
        record(3, "forward-kernel equivalence", guarded(forward_kernel_equivalence));
    }
    if want(4) {
        record(4, "gp zero-cost family", guarded(gp_zero_family));
    }
    if want(5) {
        record(5, "overfit smoke", guarded(overfit_smoke));
    }
    if want(6) || want(7) {
        desk_and_endpoints(&mut record);
    }
    if want(8) {
        record(8, "metric oracles", guarded(metric_oracles));
    }
    if want(9) {
        record(9, "pipeline validity", guarded(pipeline_validity));
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
