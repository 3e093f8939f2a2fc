use std::fmt::Write as _;
use std::path::Path;

use super::metrics::waypoint_in_collision;
use crate::error::{Error, Result};
use crate::geometry::{Environment, RobotKind, RobotModel, SdfPrimitive};
use crate::trajectory::Trajectory;

const SIZE: f64 = 600.0;
const STYLE: &str = "\
.obstacle.base{fill:#9e9e9e}\
.obstacle.extra{fill:#d32f2f;fill-opacity:0.8}\
.traj{fill:none;stroke-width:1.5;stroke-opacity:0.7}\
.traj.free{stroke:#2e7d32}\
.traj.collision{stroke:#ef6c00}\
.start{fill:#1565c0}\
.goal{fill:#6a1b9a}";

/// Workspace points traced by a trajectory: the configuration itself for a
/// point mass, the end-effector position for an arm.
fn trace(robot: &RobotModel, traj: &Trajectory) -> Result<Vec<[f64; 2]>> {
    traj.positions()
        .map(|q| match robot.kind {
            RobotKind::PointMass2d => Ok([q[0], q[1]]),
            RobotKind::PlanarArm => {
                let fk = robot.forward_kinematics(&q)?;
                Ok([fk.ee_pose.position.x, fk.ee_pose.position.y])
            }
        })
        .collect()
}

/// SVG document of the environment and a trajectory batch. Base obstacles
/// are gray, extra obstacles red; each trajectory carries class `free` or
/// `collision`; the first trajectory's start and goal are marked.
pub fn render_svg_string(batch: &[Trajectory], env: &Environment, robot: &RobotModel) -> Result<String> {
    if robot.kind == RobotKind::PointMass2d && robot.dof() != 2 {
        return Err(Error::Unsupported(format!("cannot render a {}-dof point robot", robot.dof())));
    }
    let b = env.workspace_bounds;
    let scale = SIZE / b.width().max(b.height());
    let (w, h) = (b.width() * scale, b.height() * scale);
    let px = |p: [f64; 2]| ((p[0] - b.min[0]) * scale, (b.max[1] - p[1]) * scale);

    let mut s = String::new();
    writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#).unwrap();
    writeln!(s, "<style>{STYLE}</style>").unwrap();
    writeln!(s, r#"<rect width="{w:.1}" height="{h:.1}" fill="white" stroke="black"/>"#).unwrap();
    let groups = [("base", &env.primitives), ("extra", &env.extra_primitives)];
    for (class, prims) in groups {
        for p in prims.iter() {
            match p {
                SdfPrimitive::Sphere { center, radius } => {
                    let (x, y) = px(*center);
                    writeln!(s, r#"<circle class="obstacle {class}" cx="{x:.3}" cy="{y:.3}" r="{:.3}"/>"#, radius * scale).unwrap();
                }
                SdfPrimitive::Box { center, half_extents } => {
                    let (x, y) = px([center[0] - half_extents[0], center[1] + half_extents[1]]);
                    writeln!(
                        s,
                        r#"<rect class="obstacle {class}" x="{x:.3}" y="{y:.3}" width="{:.3}" height="{:.3}"/>"#,
                        2.0 * half_extents[0] * scale,
                        2.0 * half_extents[1] * scale
                    )
                    .unwrap();
                }
            }
        }
    }
    for traj in batch {
        let colliding = traj.positions().any(|q| waypoint_in_collision(env, robot, &q));
        let class = if colliding { "collision" } else { "free" };
        let pts: Vec<String> = trace(robot, traj)?
            .into_iter()
            .map(|p| {
                let (x, y) = px(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        writeln!(s, r#"<polyline class="traj {class}" points="{}"/>"#, pts.join(" ")).unwrap();
    }
    if let Some(first) = batch.first() {
        let pts = trace(robot, first)?;
        for (class, p) in [("start", pts[0]), ("goal", pts[pts.len() - 1])] {
            let (x, y) = px(p);
            writeln!(s, r#"<circle class="{class}" cx="{x:.3}" cy="{y:.3}" r="6"/>"#).unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_svg(batch: &[Trajectory], env: &Environment, robot: &RobotModel, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg_string(batch, env, robot)?)?;
    Ok(())
}
