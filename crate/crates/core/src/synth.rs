//! Deterministic labeled scenes built from simple surface primitives.
//!
//! Samples are drawn from a counter-based stream keyed by
//! `(seed, primitive, sample, dimension)`, so a primitive's points depend
//! only on its own description and the seed.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Trajectory, Waypoint};
use crate::error::{Error, Result};
use crate::model::{ClassId, LabelSet, PointCloud, Vec3};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Parallelogram `origin + a * edge_u + b * edge_v`, `a, b` in `[0, 1]`.
    Plane {
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
    /// Box surface, rotated by `yaw` radians about the vertical axis.
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        #[serde(default)]
        yaw: f64,
        #[serde(default)]
        open_bottom: bool,
    },
    /// Lateral surface of a cylinder.
    Cylinder {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
    /// Upper half of a cylinder around a non-vertical axis: a vault whose
    /// springing line is the horizontal plane through the axis.
    TubeArch {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub class: String,
    /// Points per square meter.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub primitives: Vec<Primitive>,
    pub trajectory: Trajectory,
}

impl SceneSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("scene spec serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<()> {
        self.trajectory
            .validate()
            .map_err(|e| Error::Config(format!("scene trajectory: {e}")))?;
        for (i, p) in self.primitives.iter().enumerate() {
            p.resolve(labels)
                .map_err(|e| Error::Config(format!("primitive {i}: {e}")))?;
        }
        Ok(())
    }
}

fn v(a: [f64; 3]) -> Vec3 {
    Vec3::from(a)
}

/// A primitive reduced to a sampler.
enum Surface {
    Plane { origin: Vec3, u: Vec3, w: Vec3 },
    Box { center: Vec3, h: Vec3, rot: Rotation3<f64>, faces: Vec<(usize, f64, f64)> },
    Tube { start: Vec3, axis: Vec3, e1: Vec3, e2: Vec3, radius: f64, sweep: f64 },
}

impl Primitive {
    fn resolve(&self, labels: &LabelSet) -> std::result::Result<(ClassId, Surface), String> {
        let class = labels
            .class_id(&self.class)
            .ok_or_else(|| format!("unknown class {:?}", self.class))?;
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(format!("density must be positive, got {}", self.density));
        }
        let finite = |a: &[f64; 3]| a.iter().all(|x| x.is_finite());
        let surface = match &self.shape {
            Shape::Plane { origin, edge_u, edge_v } => {
                if ![origin, edge_u, edge_v].into_iter().all(finite) {
                    return Err("non-finite plane".into());
                }
                Surface::Plane {
                    origin: v(*origin),
                    u: v(*edge_u),
                    w: v(*edge_v),
                }
            }
            Shape::Box {
                center,
                half_extents: he,
                yaw,
                open_bottom,
            } => {
                if !finite(center) || !yaw.is_finite() || !he.iter().all(|&h| h > 0.0 && h.is_finite()) {
                    return Err("box needs a finite center and positive half extents".into());
                }
                // (axis, sign, area) per face.
                let mut faces = Vec::new();
                for axis in 0..3 {
                    let area = 4.0 * he[(axis + 1) % 3] * he[(axis + 2) % 3];
                    for sign in [-1.0, 1.0] {
                        if axis == 2 && sign < 0.0 && *open_bottom {
                            continue;
                        }
                        faces.push((axis, sign, area));
                    }
                }
                Surface::Box {
                    center: v(*center),
                    h: v(*he),
                    rot: Rotation3::from_axis_angle(&Vec3::z_axis(), *yaw),
                    faces,
                }
            }
            Shape::Cylinder { start, end, radius } | Shape::TubeArch { start, end, radius } => {
                if !finite(start) || !finite(end) || !(*radius > 0.0 && radius.is_finite()) {
                    return Err("cylinder needs finite ends and a positive radius".into());
                }
                let axis = v(*end) - v(*start);
                if axis.norm() < 1e-9 {
                    return Err("cylinder axis has zero length".into());
                }
                let a = axis.normalize();
                let arch = matches!(self.shape, Shape::TubeArch { .. });
                // e2 is the upward radial direction for arches.
                let up = Vec3::z();
                let e2 = up - a * up.dot(&a);
                let (e1, e2) = if e2.norm() > 1e-9 {
                    let e2 = e2.normalize();
                    (e2.cross(&a), e2)
                } else if arch {
                    return Err("tube arch axis must not be vertical".into());
                } else {
                    let e1 = Vec3::x();
                    (e1, a.cross(&e1))
                };
                Surface::Tube {
                    start: v(*start),
                    axis,
                    e1,
                    e2,
                    radius: *radius,
                    sweep: if arch { PI } else { 2.0 * PI },
                }
            }
        };
        Ok((class, surface))
    }
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Plane { u, w, .. } => u.cross(w).norm(),
            Surface::Box { faces, .. } => faces.iter().map(|f| f.2).sum(),
            Surface::Tube { axis, radius, sweep, .. } => sweep * radius * axis.norm(),
        }
    }

    /// Point for the uniform draws `r` (each in `[0, 1)`).
    fn sample(&self, r: [f64; 3]) -> Vec3 {
        match self {
            Surface::Plane { origin, u, w } => origin + u * r[0] + w * r[1],
            Surface::Box { center, h, rot, faces } => {
                let total: f64 = faces.iter().map(|f| f.2).sum();
                let mut pick = r[0] * total;
                let mut face = faces[faces.len() - 1];
                for f in faces {
                    if pick < f.2 {
                        face = *f;
                        break;
                    }
                    pick -= f.2;
                }
                let (axis, sign, _) = face;
                let mut local = Vec3::zeros();
                local[axis] = sign * h[axis];
                local[(axis + 1) % 3] = (2.0 * r[1] - 1.0) * h[(axis + 1) % 3];
                local[(axis + 2) % 3] = (2.0 * r[2] - 1.0) * h[(axis + 2) % 3];
                center + rot * local
            }
            Surface::Tube {
                start,
                axis,
                e1,
                e2,
                radius,
                sweep,
            } => {
                let phi = r[1] * sweep;
                start + axis * r[0] + (e1 * phi.cos() + e2 * phi.sin()) * *radius
            }
        }
    }
}

/// Gray-ish base color per class so rendered views are readable.
pub fn class_color(class: ClassId) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 10] = [
        [0, 0, 0],
        [90, 90, 95],
        [180, 120, 90],
        [120, 170, 220],
        [140, 80, 40],
        [30, 30, 30],
        [200, 40, 40],
        [50, 140, 50],
        [150, 150, 130],
        [200, 190, 140],
    ];
    PALETTE[class as usize % PALETTE.len()]
}

/// Points of one primitive: `round(area * density)` uniform samples.
fn sample_primitive(seed: u64, index: usize, surface: &Surface, density: f64) -> Vec<Vec3> {
    let count = (surface.area() * density).round() as u64;
    (0..count)
        .map(|k| {
            let key = |dim: u64| rng::unit(&[seed, index as u64, k, dim]);
            surface.sample([key(0), key(1), key(2)])
        })
        .collect()
}

/// Generates the labeled cloud and the scene's trajectory.
pub fn generate(spec: &SceneSpec, labels: &LabelSet) -> Result<(PointCloud, Trajectory)> {
    spec.validate(labels)?;
    let resolved: Vec<(ClassId, Surface, f64)> = spec
        .primitives
        .iter()
        .map(|p| {
            let (class, surface) = p.resolve(labels).expect("validated");
            (class, surface, p.density)
        })
        .collect();
    let parts: Vec<Vec<Vec3>> = resolved
        .par_iter()
        .enumerate()
        .map(|(i, (_, surface, density))| sample_primitive(spec.seed, i, surface, *density))
        .collect();
    let total: usize = parts.iter().map(Vec::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut colors = Vec::with_capacity(total);
    let mut gt = Vec::with_capacity(total);
    for ((class, _, _), pts) in resolved.iter().zip(parts) {
        colors.extend(std::iter::repeat(class_color(*class)).take(pts.len()));
        gt.extend(std::iter::repeat(*class).take(pts.len()));
        positions.extend(pts);
    }
    let cloud = PointCloud::new(positions, Some(colors), Some(gt))?;
    Ok((cloud, spec.trajectory.clone()))
}

pub const FIXTURES: [&str; 2] = ["scene1-tunnel", "scene2-bridge"];

/// A bundled scene by name.
pub fn fixture(name: &str) -> Option<SceneSpec> {
    match name {
        "scene1-tunnel" => Some(scene1_tunnel()),
        "scene2-bridge" => Some(scene2_bridge()),
        _ => None,
    }
}

const DENSITY: f64 = 135.0;

fn plane(class: &str, origin: [f64; 3], edge_u: [f64; 3], edge_v: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Plane { origin, edge_u, edge_v },
        class: class.into(),
        density: DENSITY,
    }
}

fn straight_trajectory(x0: f64, x1: f64, spacing: f64) -> Trajectory {
    Trajectory {
        waypoints: vec![Waypoint::new(x0, 0.0, 2.0), Waypoint::new(x1, 0.0, 2.0)],
        spacing,
    }
}

/// Facade on the side `side` (+1 left, -1 right) of the road spanning
/// `[x0, x0 + 40]`, with two rows of windows and a door, all set 0.3 m
/// in front of the wall.
fn building_block(x0: f64, side: f64, out: &mut Vec<Primitive>) {
    const WALL: f64 = 9.0;
    const LENGTH: f64 = 40.0;
    const HEIGHT: f64 = 10.0;
    let wall_y = side * WALL;
    let panel_y = side * (WALL - 0.3);
    out.push(plane("building", [x0, wall_y, 0.0], [LENGTH, 0.0, 0.0], [0.0, 0.0, HEIGHT]));
    for bay in 0..8 {
        let bx = x0 + 5.0 * bay as f64 + 1.7;
        for z in [3.5, 6.5] {
            out.push(plane("window", [bx, panel_y, z], [1.6, 0.0, 0.0], [0.0, 0.0, 1.4]));
        }
    }
    for dx in [11.9, 31.9] {
        out.push(plane("door", [x0 + dx, panel_y, 0.0], [1.2, 0.0, 0.0], [0.0, 0.0, 2.2]));
    }
}

/// Street with building blocks at both ends and a 30 m vaulted tunnel in
/// between (about 5e5 points).
pub fn scene1_tunnel() -> SceneSpec {
    let mut primitives = vec![plane("road", [0.0, -5.0, 0.0], [130.0, 0.0, 0.0], [0.0, 10.0, 0.0])];
    for x0 in [0.0, 90.0] {
        building_block(x0, 1.0, &mut primitives);
        building_block(x0, -1.0, &mut primitives);
    }
    primitives.push(Primitive {
        shape: Shape::TubeArch {
            start: [50.0, 0.0, 0.0],
            end: [80.0, 0.0, 0.0],
            radius: 7.0,
        },
        class: "tunnel".into(),
        density: DENSITY,
    });
    SceneSpec {
        seed: 1,
        primitives,
        trajectory: straight_trajectory(0.0, 130.0, 5.0),
    }
}

/// Road passing under a 10 m wide overpass, with trees and two overhead
/// wires. The deck top faces away from every street-level camera.
pub fn scene2_bridge() -> SceneSpec {
    let mut primitives = vec![plane("road", [0.0, -5.0, 0.0], [120.0, 0.0, 0.0], [0.0, 10.0, 0.0])];
    primitives.push(Primitive {
        shape: Shape::Box {
            center: [60.0, 0.0, 5.3],
            half_extents: [5.0, 25.0, 0.3],
            yaw: 0.0,
            open_bottom: false,
        },
        class: "bridge".into(),
        density: DENSITY,
    });
    for (y, z) in [(8.0, 8.0), (-8.0, 8.5)] {
        primitives.push(Primitive {
            shape: Shape::Cylinder {
                start: [0.0, y, z],
                end: [120.0, y, z],
                radius: 0.02,
            },
            class: "powerline".into(),
            density: DENSITY,
        });
    }
    for x in [10.0, 25.0, 40.0, 80.0, 95.0, 110.0] {
        for y in [-10.0, 10.0] {
            primitives.push(Primitive {
                shape: Shape::Cylinder {
                    start: [x, y, 0.0],
                    end: [x, y, 3.0],
                    radius: 0.2,
                },
                class: "tree".into(),
                density: DENSITY,
            });
            primitives.push(Primitive {
                shape: Shape::Box {
                    center: [x, y, 4.5],
                    half_extents: [1.5, 1.5, 1.5],
                    yaw: 0.0,
                    open_bottom: false,
                },
                class: "tree".into(),
                density: DENSITY,
            });
        }
    }
    SceneSpec {
        seed: 2,
        primitives,
        trajectory: straight_trajectory(0.0, 120.0, 5.0),
    }
}
