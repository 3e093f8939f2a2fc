//! Planar signed-distance environments and robot models.
//!
//! Obstacles are unions of spheres (discs) and axis-aligned boxes in a 2D
//! workspace. Robots are either a 2D point mass or a planar serial arm whose
//! links rotate about the z axis; both are approximated by a set of collision
//! spheres rigidly attached to their links.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = Vector2<f64>;

/// Returned by [`Environment::sdf`] when there is nothing to collide with.
pub const SDF_EMPTY: f64 = f64::MAX;

/// Default draw budget for [`sample_free_config`].
pub const DEFAULT_SAMPLE_BUDGET: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SdfPrimitive {
    Sphere { center: [f64; 2], radius: f64 },
    Box { center: [f64; 2], half_extents: [f64; 2] },
}

impl SdfPrimitive {
    pub fn sphere(center: [f64; 2], radius: f64) -> Self {
        SdfPrimitive::Sphere { center, radius }
    }

    pub fn aabb(center: [f64; 2], half_extents: [f64; 2]) -> Self {
        SdfPrimitive::Box {
            center,
            half_extents,
        }
    }

    pub fn center(&self) -> Point2 {
        match self {
            SdfPrimitive::Sphere { center, .. } | SdfPrimitive::Box { center, .. } => {
                Point2::new(center[0], center[1])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            SdfPrimitive::Sphere { radius, .. } if !(*radius > 0.0) => Err(Error::Config(
                format!("sphere radius must be positive, got {radius}"),
            )),
            SdfPrimitive::Box { half_extents, .. }
                if !(half_extents[0] > 0.0 && half_extents[1] > 0.0) =>
            {
                Err(Error::Config(format!(
                    "box half-extents must be positive, got {half_extents:?}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Exact signed distance: positive outside, negative inside.
    pub fn distance(&self, x: &Point2) -> f64 {
        match self {
            SdfPrimitive::Sphere { radius, .. } => (x - self.center()).norm() - radius,
            SdfPrimitive::Box { half_extents, .. } => {
                let p = x - self.center();
                let qx = p.x.abs() - half_extents[0];
                let qy = p.y.abs() - half_extents[1];
                let outside = Point2::new(qx.max(0.0), qy.max(0.0)).norm();
                let inside = qx.max(qy).min(0.0);
                outside + inside
            }
        }
    }

    /// Gradient of [`SdfPrimitive::distance`]. At the exact center of a
    /// sphere the gradient is taken along +x.
    pub fn gradient(&self, x: &Point2) -> Point2 {
        match self {
            SdfPrimitive::Sphere { .. } => {
                let p = x - self.center();
                let n = p.norm();
                if n > 0.0 {
                    p / n
                } else {
                    Point2::new(1.0, 0.0)
                }
            }
            SdfPrimitive::Box { half_extents, .. } => {
                let p = x - self.center();
                let sx = if p.x >= 0.0 { 1.0 } else { -1.0 };
                let sy = if p.y >= 0.0 { 1.0 } else { -1.0 };
                let qx = p.x.abs() - half_extents[0];
                let qy = p.y.abs() - half_extents[1];
                if qx > 0.0 || qy > 0.0 {
                    let o = Point2::new(qx.max(0.0) * sx, qy.max(0.0) * sy);
                    o / o.norm()
                } else if qx >= qy {
                    Point2::new(sx, 0.0)
                } else {
                    Point2::new(0.0, sy)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min[0] && p.x <= self.max[0] && p.y >= self.min[1] && p.y <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            min: [-1.0, -1.0],
            max: [1.0, 1.0],
        }
    }
}

/// Obstacle set plus workspace bounds. `extra_primitives` hold obstacles
/// added only for generalization tests; they participate in every query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub workspace_bounds: Bounds,
    #[serde(default)]
    pub primitives: Vec<SdfPrimitive>,
    #[serde(default)]
    pub extra_primitives: Vec<SdfPrimitive>,
}

impl Environment {
    pub fn new(
        workspace_bounds: Bounds,
        primitives: Vec<SdfPrimitive>,
        extra_primitives: Vec<SdfPrimitive>,
    ) -> Result<Self> {
        let env = Environment {
            workspace_bounds,
            primitives,
            extra_primitives,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn empty(workspace_bounds: Bounds) -> Self {
        Environment {
            workspace_bounds,
            primitives: Vec::new(),
            extra_primitives: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.workspace_bounds;
        if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
            return Err(Error::Config(format!("degenerate workspace bounds {b:?}")));
        }
        for p in self.all_primitives() {
            p.validate()?;
            if !b.contains(&p.center()) {
                return Err(Error::Config(format!(
                    "primitive center {:?} outside workspace bounds",
                    p.center()
                )));
            }
        }
        Ok(())
    }

    pub fn all_primitives(&self) -> impl Iterator<Item = &SdfPrimitive> {
        self.primitives.iter().chain(self.extra_primitives.iter())
    }

    /// Copy of this environment without the extra obstacles.
    pub fn base(&self) -> Environment {
        Environment {
            workspace_bounds: self.workspace_bounds,
            primitives: self.primitives.clone(),
            extra_primitives: Vec::new(),
        }
    }

    pub fn with_extra(&self, extra: Vec<SdfPrimitive>) -> Result<Environment> {
        let mut env = self.clone();
        env.extra_primitives = extra;
        env.validate()?;
        Ok(env)
    }

    /// Signed distance to the closest obstacle surface.
    pub fn sdf(&self, x: &Point2) -> f64 {
        self.all_primitives()
            .map(|p| p.distance(x))
            .fold(SDF_EMPTY, f64::min)
    }

    /// Gradient of [`Environment::sdf`]; ties go to the lowest primitive index.
    pub fn sdf_grad(&self, x: &Point2) -> Point2 {
        self.sdf_with_grad(x).1
    }

    pub fn sdf_with_grad(&self, x: &Point2) -> (f64, Point2) {
        let mut best: Option<(f64, &SdfPrimitive)> = None;
        for p in self.all_primitives() {
            let d = p.distance(x);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, p));
            }
        }
        match best {
            Some((d, p)) => (d, p.gradient(x)),
            None => (SDF_EMPTY, Point2::zeros()),
        }
    }
}

/// Parameters for seeded random environment generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvGenConfig {
    pub seed: u64,
    pub workspace_bounds: Bounds,
    pub n_spheres: usize,
    pub n_boxes: usize,
    pub radius_range: [f64; 2],
    pub half_extent_range: [f64; 2],
    pub n_extra_spheres: usize,
    pub n_extra_boxes: usize,
    /// Fraction of the workspace (per side) kept free of obstacle centers.
    pub border_fraction: f64,
}

impl Default for EnvGenConfig {
    fn default() -> Self {
        EnvGenConfig {
            seed: 0,
            workspace_bounds: Bounds::default(),
            n_spheres: 8,
            n_boxes: 7,
            radius_range: [0.08, 0.14],
            half_extent_range: [0.06, 0.12],
            n_extra_spheres: 3,
            n_extra_boxes: 2,
            border_fraction: 0.1,
        }
    }
}

impl EnvGenConfig {
    pub fn generate(&self) -> Result<Environment> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let b = self.workspace_bounds;
        let mx = self.border_fraction * b.width();
        let my = self.border_fraction * b.height();
        let center = |rng: &mut rand_chacha::ChaCha8Rng| {
            [
                rng.random_range(b.min[0] + mx..=b.max[0] - mx),
                rng.random_range(b.min[1] + my..=b.max[1] - my),
            ]
        };
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, ns: usize, nb: usize| {
            let mut out = Vec::with_capacity(ns + nb);
            for _ in 0..ns {
                let c = center(rng);
                let r = rng.random_range(self.radius_range[0]..=self.radius_range[1]);
                out.push(SdfPrimitive::sphere(c, r));
            }
            for _ in 0..nb {
                let c = center(rng);
                let h = [
                    rng.random_range(self.half_extent_range[0]..=self.half_extent_range[1]),
                    rng.random_range(self.half_extent_range[0]..=self.half_extent_range[1]),
                ];
                out.push(SdfPrimitive::aabb(c, h));
            }
            out
        };
        let base = draw(&mut rng, self.n_spheres, self.n_boxes);
        let extra = draw(&mut rng, self.n_extra_spheres, self.n_extra_boxes);
        Environment::new(b, base, extra)
    }
}

/// Rigid pose in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Pose3 {
    pub fn identity() -> Self {
        Pose3 {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    /// Planar pose: rotation by `theta` about z, position in the z = 0 plane.
    pub fn planar(x: f64, y: f64, theta: f64) -> Self {
        Pose3 {
            rotation: rot_z(theta),
            position: Vector3::new(x, y, 0.0),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() < tol
            && (r.determinant() - 1.0).abs() < tol
    }
}

pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    PointMass2d,
    PlanarArm,
}

/// Sphere attached to `link` at `offset` in the link frame (x along the link).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSphere {
    pub link: usize,
    pub offset: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub kind: RobotKind,
    #[serde(default)]
    pub link_lengths: Vec<f64>,
    pub collision_spheres: Vec<CollisionSphere>,
    pub joint_limits: Vec<(f64, f64)>,
    pub velocity_limits: Vec<(f64, f64)>,
}

/// Forward kinematics result.
#[derive(Clone, Debug)]
pub struct FkResult {
    pub sphere_centers: Vec<Point2>,
    pub ee_pose: Pose3,
}

/// Jacobians of every sphere center (2×dof) and of the end-effector
/// position (2×dof) and planar heading (1×dof).
#[derive(Clone, Debug)]
pub struct FkJacobian {
    pub spheres: Vec<DMatrix<f64>>,
    pub ee_position: DMatrix<f64>,
    pub ee_heading: DVector<f64>,
}

impl RobotModel {
    pub fn point_mass(bounds: Bounds, radius: f64, max_velocity: f64) -> Self {
        RobotModel {
            kind: RobotKind::PointMass2d,
            link_lengths: Vec::new(),
            collision_spheres: vec![CollisionSphere {
                link: 0,
                offset: [0.0, 0.0],
                radius,
            }],
            joint_limits: vec![(bounds.min[0], bounds.max[0]), (bounds.min[1], bounds.max[1])],
            velocity_limits: vec![(-max_velocity, max_velocity); 2],
        }
    }

    /// Planar arm with three spheres per link at the link start, middle and
    /// end, each of radius `0.05 * link_length`.
    pub fn planar_arm(link_lengths: &[f64]) -> Self {
        let mut spheres = Vec::with_capacity(3 * link_lengths.len());
        for (link, &l) in link_lengths.iter().enumerate() {
            for k in 0..3 {
                spheres.push(CollisionSphere {
                    link,
                    offset: [l * k as f64 / 2.0, 0.0],
                    radius: 0.05 * l,
                });
            }
        }
        let n = link_lengths.len();
        RobotModel {
            kind: RobotKind::PlanarArm,
            link_lengths: link_lengths.to_vec(),
            collision_spheres: spheres,
            joint_limits: vec![(-std::f64::consts::PI, std::f64::consts::PI); n],
            velocity_limits: vec![(-2.0, 2.0); n],
        }
    }

    pub fn dof(&self) -> usize {
        match self.kind {
            RobotKind::PointMass2d => 2,
            RobotKind::PlanarArm => self.link_lengths.len(),
        }
    }

    pub fn num_links(&self) -> usize {
        match self.kind {
            RobotKind::PointMass2d => 1,
            RobotKind::PlanarArm => self.link_lengths.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dof = self.dof();
        if dof == 0 {
            return Err(Error::Config("robot must have at least one dof".into()));
        }
        if self.collision_spheres.is_empty() {
            return Err(Error::Config("robot needs at least one collision sphere".into()));
        }
        if self.joint_limits.len() != dof || self.velocity_limits.len() != dof {
            return Err(Error::Config(format!(
                "expected {dof} joint and velocity limits, got {} and {}",
                self.joint_limits.len(),
                self.velocity_limits.len()
            )));
        }
        for &(lo, hi) in self.joint_limits.iter().chain(&self.velocity_limits) {
            if !(lo < hi) {
                return Err(Error::Config(format!("limit ({lo}, {hi}) has q_min >= q_max")));
            }
        }
        for s in &self.collision_spheres {
            if s.link >= self.num_links() || s.radius < 0.0 {
                return Err(Error::Config(format!("invalid collision sphere {s:?}")));
            }
        }
        if self.kind == RobotKind::PlanarArm && self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        Ok(())
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Cumulative heading and origin of each link frame.
    fn link_frames(&self, q: &[f64]) -> (Vec<f64>, Vec<Point2>) {
        let n = self.link_lengths.len();
        let mut headings = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n + 1);
        let mut theta = 0.0;
        let mut p = Point2::zeros();
        for i in 0..n {
            theta += q[i];
            headings.push(theta);
            origins.push(p);
            p += self.link_lengths[i] * Point2::new(theta.cos(), theta.sin());
        }
        origins.push(p);
        (headings, origins)
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<FkResult> {
        self.check_dim(q)?;
        Ok(match self.kind {
            RobotKind::PointMass2d => {
                let x = Point2::new(q[0], q[1]);
                FkResult {
                    sphere_centers: self
                        .collision_spheres
                        .iter()
                        .map(|s| x + Point2::new(s.offset[0], s.offset[1]))
                        .collect(),
                    ee_pose: Pose3::planar(q[0], q[1], 0.0),
                }
            }
            RobotKind::PlanarArm => {
                let (headings, origins) = self.link_frames(q);
                let sphere_centers = self
                    .collision_spheres
                    .iter()
                    .map(|s| {
                        let th = headings[s.link];
                        let (sn, cs) = th.sin_cos();
                        origins[s.link]
                            + Point2::new(
                                cs * s.offset[0] - sn * s.offset[1],
                                sn * s.offset[0] + cs * s.offset[1],
                            )
                    })
                    .collect();
                let tip = origins[self.link_lengths.len()];
                let heading = *headings.last().unwrap();
                FkResult {
                    sphere_centers,
                    ee_pose: Pose3::planar(tip.x, tip.y, heading),
                }
            }
        })
    }

    /// Analytic Jacobians for the planar chain: joint `k` moves a point `x`
    /// on link `i >= k` by `e_z × (x - origin_k)`.
    pub fn fk_jacobian(&self, q: &[f64]) -> Result<FkJacobian> {
        self.check_dim(q)?;
        let dof = self.dof();
        Ok(match self.kind {
            RobotKind::PointMass2d => FkJacobian {
                spheres: vec![DMatrix::identity(2, 2); self.collision_spheres.len()],
                ee_position: DMatrix::identity(2, 2),
                ee_heading: DVector::zeros(2),
            },
            RobotKind::PlanarArm => {
                let fk = self.forward_kinematics(q)?;
                let (_, origins) = self.link_frames(q);
                let column = |x: &Point2, upto: usize| {
                    let mut j = DMatrix::zeros(2, dof);
                    for k in 0..=upto {
                        let r = x - origins[k];
                        j[(0, k)] = -r.y;
                        j[(1, k)] = r.x;
                    }
                    j
                };
                let spheres = self
                    .collision_spheres
                    .iter()
                    .zip(&fk.sphere_centers)
                    .map(|(s, c)| column(c, s.link))
                    .collect();
                let tip = Point2::new(fk.ee_pose.position.x, fk.ee_pose.position.y);
                FkJacobian {
                    spheres,
                    ee_position: column(&tip, dof - 1),
                    ee_heading: DVector::from_element(dof, 1.0),
                }
            }
        })
    }

    /// True when any sphere penetrates an obstacle inflated by `margin`.
    pub fn in_collision(&self, env: &Environment, q: &[f64], margin: f64) -> bool {
        match self.forward_kinematics(q) {
            Ok(fk) => fk
                .sphere_centers
                .iter()
                .zip(&self.collision_spheres)
                .any(|(c, s)| env.sdf(c) <= s.radius + margin),
            Err(_) => true,
        }
    }

    pub fn within_joint_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

/// Uniform draw inside the joint limits whose spheres all clear the
/// obstacles by more than `margin`.
pub fn sample_free_config<R: Rng + ?Sized>(
    env: &Environment,
    robot: &RobotModel,
    margin: f64,
    budget: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for _ in 0..budget {
        let q: Vec<f64> = robot
            .joint_limits
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..hi))
            .collect();
        if !robot.in_collision(env, &q, margin) {
            return Ok(q);
        }
    }
    Err(Error::SamplingExhausted(budget))
}

/// Environment and robot description as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentFile {
    pub environment: Environment,
    pub robot: RobotModel,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl EnvironmentFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: EnvironmentFile = serde_json::from_str(&text)?;
        file.environment.validate()?;
        file.robot.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
