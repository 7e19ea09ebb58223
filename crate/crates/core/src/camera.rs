//! Pinhole cameras, look-at poses and camera placement along a trajectory.
//!
//! Conventions: `x_cam = R * x_world + t`, the camera looks down camera +z,
//! image +x (column `u`) points right and image +y (row `v`) points down.
//! Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Default near plane, meters.
pub const DEFAULT_Z_NEAR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Argument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument("image size must be at least 1x1".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(Error::Argument(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Square-pixel intrinsics with a horizontal field of view of `fov_deg`
    /// across `width`, principal point at the image center.
    pub fn from_fov(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Argument(format!(
                "field of view must be in (0, 180) degrees, got {fov_deg}"
            )));
        }
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Viewing direction in world coordinates (third row of `R`).
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }
}

/// A world point projected into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Projects `world` into the image. `None` when the point is at or behind
/// the near plane or its pixel falls outside the image.
pub fn project_point(
    world: &Vec3,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    z_near: f64,
) -> Option<Projection> {
    let cam = pose.to_camera(world);
    if !(cam.z > z_near) {
        return None;
    }
    let u = intr.fx * cam.x / cam.z + intr.cx;
    let v = intr.fy * cam.y / cam.z + intr.cy;
    let (uf, vf) = (u.floor(), v.floor());
    if uf < 0.0 || vf < 0.0 || uf >= intr.width as f64 || vf >= intr.height as f64 {
        return None;
    }
    Some(Projection { u, v, depth: cam.z })
}

/// Pose at `camera_pos` looking at `target`. Falls back to `(0, 1, 0)` as the
/// up hint when the gaze is (nearly) parallel to `up_hint`.
pub fn look_at(camera_pos: &Vec3, target: &Vec3, up_hint: &Vec3) -> Result<CameraPose> {
    let delta = target - camera_pos;
    if !(delta.norm() > 1e-9) {
        return Err(Error::Argument(
            "look_at target coincides with camera position".into(),
        ));
    }
    let forward = delta.normalize();
    let mut side = forward.cross(up_hint);
    if side.norm() < 1e-6 {
        side = forward.cross(&Vec3::new(0.0, 1.0, 0.0));
    }
    let right = side.normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    Ok(CameraPose {
        rotation,
        translation: -(rotation * camera_pos),
    })
}

pub fn z_up() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Heading about world z in radians, overriding the travel direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            heading: None,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// Polyline of camera positions resampled every `spacing` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    pub spacing: f64,
}

/// A resampled trajectory position with its horizontal heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vec3,
    pub heading: f64,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>, spacing: f64) -> Result<Self> {
        let traj = Self { waypoints, spacing };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Argument("trajectory has no waypoints".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Argument(format!(
                "trajectory spacing must be positive, got {}",
                self.spacing
            )));
        }
        let finite = |w: &Waypoint| {
            w.x.is_finite() && w.y.is_finite() && w.z.is_finite() && w.heading.map_or(true, f64::is_finite)
        };
        if !self.waypoints.iter().all(finite) {
            return Err(Error::Argument("non-finite waypoint".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let traj: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        traj.validate()?;
        Ok(traj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("trajectory serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .sum()
    }

    /// Position at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec3 {
        let mut remaining = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let (a, b) = (w[0].position(), w[1].position());
            let len = (b - a).norm();
            if remaining <= len && len > 0.0 {
                return a + (b - a) * (remaining / len);
            }
            remaining -= len;
        }
        self.waypoints.last().unwrap().position()
    }

    /// Samples at arc lengths `0, spacing, 2*spacing, ...` up to the total
    /// length. The heading is the waypoint heading when one is given (the
    /// waypoint at the sample, else the segment's start waypoint), otherwise
    /// the horizontal direction of the path tangent. At an interior vertex
    /// the tangent is the bisector of the incoming and outgoing directions.
    pub fn resample(&self) -> Result<Vec<TrajectorySample>> {
        self.validate()?;
        // Drop zero-length segments so every segment has a direction.
        let mut pts: Vec<&Waypoint> = vec![&self.waypoints[0]];
        for w in &self.waypoints[1..] {
            if (w.position() - pts.last().unwrap().position()).norm() > 1e-12 {
                pts.push(w);
            } else if w.heading.is_some() {
                *pts.last_mut().unwrap() = w;
            }
        }
        if pts.len() == 1 {
            return Ok(vec![TrajectorySample {
                position: pts[0].position(),
                heading: pts[0].heading.unwrap_or(0.0),
            }]);
        }
        let dirs: Vec<Vec3> = pts
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).normalize())
            .collect();
        let lens: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .collect();
        let total: f64 = lens.iter().sum();
        let count = (total / self.spacing + 1e-9).floor() as usize + 1;
        const SNAP: f64 = 1e-9;

        let mut samples = Vec::with_capacity(count);
        let mut seg = 0;
        let mut seg_start = 0.0;
        for k in 0..count {
            let s = (k as f64 * self.spacing).min(total);
            while seg + 1 < lens.len() && s > seg_start + lens[seg] + SNAP {
                seg_start += lens[seg];
                seg += 1;
            }
            let local = (s - seg_start).clamp(0.0, lens[seg]);
            let a = pts[seg].position();
            let position = a + dirs[seg] * local;

            // Which waypoint, if any, the sample sits on.
            let at_vertex = if local <= SNAP {
                Some(seg)
            } else if lens[seg] - local <= SNAP {
                Some(seg + 1)
            } else {
                None
            };
            let tangent = match at_vertex {
                Some(0) => dirs[0],
                Some(v) if v == pts.len() - 1 => dirs[v - 1],
                Some(v) => dirs[v - 1] + dirs[v],
                None => dirs[seg],
            };
            let heading = at_vertex
                .and_then(|v| pts[v].heading)
                .or(pts[seg].heading)
                .unwrap_or_else(|| horizontal_heading(&tangent));
            samples.push(TrajectorySample { position, heading });
        }
        Ok(samples)
    }
}

fn horizontal_heading(dir: &Vec3) -> f64 {
    if dir.x.hypot(dir.y) < 1e-12 {
        0.0
    } else {
        dir.y.atan2(dir.x)
    }
}

/// Unit viewing direction for a heading and pitch (radians, pitch up positive).
pub fn direction(heading: f64, pitch: f64) -> Vec3 {
    Vec3::new(
        pitch.cos() * heading.cos(),
        pitch.cos() * heading.sin(),
        pitch.sin(),
    )
}

/// One pose per (trajectory sample, yaw), waypoint-major and yaw-minor.
/// Yaw is measured counter-clockwise about world z from the sample heading.
pub fn place_cameras(traj: &Trajectory, yaw_set: &[f64], pitch: f64) -> Result<Vec<CameraPose>> {
    if yaw_set.is_empty() {
        return Err(Error::Argument("yaw set is empty".into()));
    }
    let samples = traj.resample()?;
    let mut poses = Vec::with_capacity(samples.len() * yaw_set.len());
    for sample in &samples {
        for &yaw in yaw_set {
            let dir = direction(sample.heading + yaw, pitch);
            poses.push(look_at(&sample.position, &(sample.position + dir), &z_up())?);
        }
    }
    Ok(poses)
}

pub fn default_yaw_set() -> Vec<f64> {
    use std::f64::consts::FRAC_PI_2;
    vec![0.0, FRAC_PI_2, 2.0 * FRAC_PI_2, 3.0 * FRAC_PI_2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3x4;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(240.0, 240.0, 240.0, 320.0, 480, 640).unwrap()
    }

    fn assert_rotation(r: &Matrix3<f64>) {
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(dev <= 1e-9, "R^T R deviates by {dev}");
        assert!((r.determinant() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn fov_90_gives_half_width_focal() {
        let k = CameraIntrinsics::from_fov(90.0, 480, 640).unwrap();
        assert_abs_diff_eq!(k.fx, 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(k.fy, 240.0, epsilon = 1e-9);
        assert_eq!((k.cx, k.cy), (240.0, 320.0));
    }

    #[test]
    fn fov_60() {
        // 240 / tan(30 deg) = 240 * sqrt(3)
        let k = CameraIntrinsics::from_fov(60.0, 480, 640).unwrap();
        assert_abs_diff_eq!(k.fx, 415.692_193_816_530_5, epsilon = 1e-9);
    }

    #[test]
    fn fov_out_of_range() {
        assert!(CameraIntrinsics::from_fov(0.0, 480, 640).is_err());
        assert!(CameraIntrinsics::from_fov(180.0, 480, 640).is_err());
        assert!(CameraIntrinsics::from_fov(f64::NAN, 480, 640).is_err());
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 1, 1).is_err());
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_point(&Vec3::new(0.0, 0.0, 1.0), &intr(), &CameraPose::identity(), 0.1)
            .unwrap();
        assert_eq!((p.u, p.v, p.depth), (240.0, 320.0, 1.0));
        assert!(
            project_point(&Vec3::new(0.0, 0.0, -1.0), &intr(), &CameraPose::identity(), 0.1)
                .is_none()
        );
        // At the near plane exactly: rejected.
        assert!(
            project_point(&Vec3::new(0.0, 0.0, 0.1), &intr(), &CameraPose::identity(), 0.1)
                .is_none()
        );
    }

    #[test]
    fn off_image_points_are_rejected() {
        let k = intr();
        let pose = CameraPose::identity();
        // u = 240 * 1.0 + 240 = 480 -> column 480 is outside [0, 480).
        assert!(project_point(&Vec3::new(1.0, 0.0, 1.0), &k, &pose, 0.1).is_none());
        let inside = project_point(&Vec3::new(0.999, 0.0, 1.0), &k, &pose, 0.1).unwrap();
        assert_eq!(inside.pixel(), (479, 320));
    }

    fn random_rotation(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        *nalgebra::Rotation3::from_euler_angles(a, b, c).matrix()
    }

    proptest! {
        #[test]
        fn projection_matches_homogeneous_oracle(
            angles in prop::array::uniform3(-PI..PI),
            t in prop::array::uniform3(-5.0f64..5.0),
            x in prop::array::uniform3(-20.0f64..20.0),
        ) {
            let pose = CameraPose { rotation: random_rotation(angles[0], angles[1], angles[2]), translation: Vec3::from(t) };
            let k = intr();
            let world = Vec3::from(x);
            let mut rt = Matrix3x4::zeros();
            rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
            rt.set_column(3, &pose.translation);
            let h = k.matrix() * rt * nalgebra::Vector4::new(world.x, world.y, world.z, 1.0);
            let got = project_point(&world, &k, &pose, 0.1);
            let (u, v) = (h.x / h.z, h.y / h.z);
            let inside = h.z > 0.1 && u >= 0.0 && v >= 0.0 && u < 480.0 && v < 640.0;
            prop_assert_eq!(got.is_some(), inside);
            if let Some(p) = got {
                prop_assert!((p.u - u).abs() <= 1e-9);
                prop_assert!((p.v - v).abs() <= 1e-9);
                prop_assert!((p.depth - h.z).abs() <= 1e-9);
            }
        }

        #[test]
        fn projection_is_scale_consistent(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.5f64..10.0, lambda in 1.0f64..50.0,
        ) {
            let k = intr();
            let pose = CameraPose::identity();
            let a = project_point(&Vec3::new(x, y, z), &k, &pose, 0.1);
            let b = project_point(&Vec3::new(lambda * x, lambda * y, lambda * z), &k, &pose, 0.1);
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a.u - b.u).abs() <= 1e-9);
                prop_assert!((a.v - b.v).abs() <= 1e-9);
            }
        }

        #[test]
        fn look_at_centers_target(
            cam in prop::array::uniform3(-50.0f64..50.0),
            target in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let (c, t) = (Vec3::from(cam), Vec3::from(target));
            prop_assume!((t - c).norm() > 1e-3);
            let pose = look_at(&c, &t, &z_up()).unwrap();
            assert_rotation(&pose.rotation);
            prop_assert!((pose.center() - c).norm() <= 1e-9);
            prop_assert!((pose.to_camera(&pose.center())).norm() <= 1e-9);
            let p = project_point(&t, &intr(), &pose, 1e-6).unwrap();
            prop_assert!((p.u - 240.0).abs() <= 1e-6 && (p.v - 320.0).abs() <= 1e-6);
            prop_assert!((p.depth - (t - c).norm()).abs() <= 1e-9);
        }
    }

    #[test]
    fn look_at_straight_down_uses_fallback() {
        let pose = look_at(&Vec3::zeros(), &Vec3::new(0.0, 0.0, -5.0), &z_up()).unwrap();
        assert_rotation(&pose.rotation);
        let p = project_point(&Vec3::new(0.0, 0.0, -5.0), &intr(), &pose, 0.1).unwrap();
        assert_abs_diff_eq!(p.u, 240.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.v, 320.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.depth, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn look_at_along_x() {
        let pose = look_at(&Vec3::zeros(), &Vec3::new(10.0, 0.0, 0.0), &z_up()).unwrap();
        assert_rotation(&pose.rotation);
        assert_abs_diff_eq!(pose.forward(), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        // Image down is world down for a level camera.
        assert_abs_diff_eq!(
            pose.rotation.row(1).transpose(),
            Vec3::new(0.0, 0.0, -1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn look_at_degenerate_target() {
        let c = Vec3::new(1.0, 2.0, 3.0);
        assert!(matches!(look_at(&c, &c, &z_up()), Err(Error::Argument(_))));
    }

    #[test]
    fn straight_trajectory_resampling() {
        let traj = Trajectory::new(
            vec![Waypoint::new(0.0, 0.0, 2.0), Waypoint::new(10.0, 0.0, 2.0)],
            5.0,
        )
        .unwrap();
        let poses = place_cameras(&traj, &[0.0], 0.0).unwrap();
        assert_eq!(poses.len(), 3);
        for (i, pose) in poses.iter().enumerate() {
            assert_rotation(&pose.rotation);
            assert_abs_diff_eq!(pose.forward(), Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
            assert_abs_diff_eq!(pose.center(), Vec3::new(5.0 * i as f64, 0.0, 2.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn four_yaws_are_mutually_orthogonal() {
        let traj = Trajectory::new(vec![Waypoint::new(3.0, -1.0, 2.0)], 1.0).unwrap();
        let poses = place_cameras(&traj, &default_yaw_set(), 0.0).unwrap();
        assert_eq!(poses.len(), 4);
        for i in 0..4 {
            assert_rotation(&poses[i].rotation);
            assert_abs_diff_eq!(poses[i].forward().z, 0.0, epsilon = 1e-12);
            for j in i + 1..4 {
                let dot = poses[i].forward().dot(&poses[j].forward());
                if (j - i) % 2 == 1 {
                    assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-12);
                } else {
                    assert_abs_diff_eq!(dot, -1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn curved_path_follows_finite_difference_tangent() {
        let traj = Trajectory::new(
            vec![
                Waypoint::new(0.0, 0.0, 2.0),
                Waypoint::new(7.0, 0.0, 2.0),
                Waypoint::new(10.0, 6.0, 2.0),
            ],
            3.5,
        )
        .unwrap();
        let yaw = 0.3;
        let poses = place_cameras(&traj, &[yaw], 0.0).unwrap();
        let total = traj.length();
        assert_eq!(poses.len(), (total / 3.5).floor() as usize + 1);
        let h = 1e-6;
        for (k, pose) in poses.iter().enumerate() {
            let s = k as f64 * 3.5;
            let (lo, hi) = ((s - h).max(0.0), (s + h).min(total));
            let tangent = (traj.point_at(hi) - traj.point_at(lo)).normalize();
            let rotated = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), yaw) * tangent;
            assert!(
                (pose.forward() - rotated).norm() < 1e-6,
                "sample {k}: {:?} vs {:?}",
                pose.forward(),
                rotated
            );
        }
    }

    #[test]
    fn waypoint_heading_overrides_travel_direction() {
        let mut a = Waypoint::new(0.0, 0.0, 2.0);
        a.heading = Some(FRAC_PI_2);
        let traj = Trajectory::new(vec![a, Waypoint::new(4.0, 0.0, 2.0)], 4.0).unwrap();
        let poses = place_cameras(&traj, &[0.0], 0.0).unwrap();
        assert_abs_diff_eq!(poses[0].forward(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        // End waypoint has no heading: segment start heading applies.
        assert_abs_diff_eq!(poses[1].forward(), Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn placement_errors() {
        let traj = Trajectory::new(vec![Waypoint::new(0.0, 0.0, 0.0)], 1.0).unwrap();
        assert!(place_cameras(&traj, &[], 0.0).is_err());
        assert!(Trajectory::new(vec![], 1.0).is_err());
        assert!(Trajectory::new(vec![Waypoint::new(0.0, 0.0, 0.0)], 0.0).is_err());
    }

    #[test]
    fn pitched_views_stay_orthonormal() {
        let traj = Trajectory::new(
            vec![Waypoint::new(0.0, 0.0, 2.0), Waypoint::new(0.0, 9.0, 2.0)],
            3.0,
        )
        .unwrap();
        for pitch in [-FRAC_PI_2, -0.4, 0.0, 0.7, FRAC_PI_2] {
            for pose in place_cameras(&traj, &default_yaw_set(), pitch).unwrap() {
                assert_rotation(&pose.rotation);
            }
        }
    }

    #[test]
    fn trajectory_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        std::fs::write(
            &path,
            r#"{"spacing": 2.5, "waypoints": [{"x":0,"y":0,"z":2}, {"x":5,"y":0,"z":2,"heading":0.5}]}"#,
        )
        .unwrap();
        let traj = Trajectory::load(&path).unwrap();
        assert_eq!(traj.waypoints[1].heading, Some(0.5));
        traj.save(&path).unwrap();
        assert_eq!(Trajectory::load(&path).unwrap(), traj);
    }
}
