//! Sphere-splat rendering with a z-buffer and a pixel-to-point map, and the
//! transfer of 2D masks back onto the points they show.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraIntrinsics, CameraPose, Projection};
use crate::error::{Error, Result};
use crate::mask::Detection2D;
use crate::model::{ClassId, PointCloud, Vec3, UNLABELED};

/// Default sphere radius for splats, meters.
pub const DEFAULT_SPLAT_RADIUS: f64 = 0.01;

/// Smallest projected splat radius, pixels.
pub const MIN_SPLAT_PIXELS: f64 = 0.5;

const NO_POINT: u32 = u32::MAX;

/// One rendered virtual-camera view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub view_id: usize,
    pub intr: CameraIntrinsics,
    pub pose: CameraPose,
    pub camera_center: Vec3,
    image: Vec<[u8; 3]>,
    depth: Vec<f64>,
    point_map: Vec<u32>,
}

impl ViewRender {
    pub fn width(&self) -> usize {
        self.intr.width
    }

    pub fn height(&self) -> usize {
        self.intr.height
    }

    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.intr.width + x
    }

    pub fn color(&self, x: usize, y: usize) -> [u8; 3] {
        self.image[self.idx(x, y)]
    }

    /// Camera-space depth of the winning splat, `+inf` where empty.
    pub fn depth(&self, x: usize, y: usize) -> f64 {
        self.depth[self.idx(x, y)]
    }

    /// Index of the source point owning pixel `(x, y)`.
    pub fn point_at(&self, x: usize, y: usize) -> Option<usize> {
        match self.point_map[self.idx(x, y)] {
            NO_POINT => None,
            i => Some(i as usize),
        }
    }

    pub fn mapped_pixels(&self) -> usize {
        self.point_map.iter().filter(|&&i| i != NO_POINT).count()
    }

    pub fn image(&self) -> &[[u8; 3]] {
        &self.image
    }

    pub fn depth_buffer(&self) -> &[f64] {
        &self.depth
    }

    /// Row-major point indices, `u32::MAX` where empty.
    pub fn point_map_buffer(&self) -> &[u32] {
        &self.point_map
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut raw = Vec::with_capacity(self.image.len() * 3);
        for px in &self.image {
            raw.extend_from_slice(px);
        }
        let img = image::RgbImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("buffer matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("PNG encoding failed: {e}")))?;
        Ok(out.into_inner())
    }

    /// Writes `<stem>.png`, `<stem>.depth.bin` (f64 LE), `<stem>.index.bin`
    /// (u32 LE, `0xFFFFFFFF` = empty) and a `<stem>.buffers.json` sidecar.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        let write = |name: String, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
        };
        write(format!("{stem}.png"), &self.to_png()?)?;
        let depth: Vec<u8> = self.depth.iter().flat_map(|d| d.to_le_bytes()).collect();
        write(format!("{stem}.depth.bin"), &depth)?;
        let index: Vec<u8> = self.point_map.iter().flat_map(|i| i.to_le_bytes()).collect();
        write(format!("{stem}.index.bin"), &index)?;
        let sidecar = BufferSidecar {
            width: self.width(),
            height: self.height(),
            depth: BufferInfo {
                file: format!("{stem}.depth.bin"),
                dtype: "float64-le".into(),
                empty: "inf".into(),
            },
            point_map: BufferInfo {
                file: format!("{stem}.index.bin"),
                dtype: "uint32-le".into(),
                empty: NO_POINT.to_string(),
            },
        };
        write(
            format!("{stem}.buffers.json"),
            serde_json::to_string_pretty(&sidecar).unwrap().as_bytes(),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferSidecar {
    width: usize,
    height: usize,
    depth: BufferInfo,
    point_map: BufferInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferInfo {
    file: String,
    dtype: String,
    empty: String,
}

/// Projected splat radius in pixels.
pub fn splat_radius_pixels(intr: &CameraIntrinsics, splat_radius: f64, depth: f64) -> f64 {
    (intr.fx * splat_radius / depth).max(MIN_SPLAT_PIXELS)
}

/// Calls `f(x, y)` for every pixel covered by a splat: pixels whose center
/// lies within `radius` of the projected center, plus the pixel containing
/// the center itself.
fn for_each_splat_pixel(
    proj: &Projection,
    radius: f64,
    width: usize,
    height: usize,
    mut f: impl FnMut(usize, usize),
) {
    let r2 = radius * radius;
    let y_lo = (proj.v - radius - 0.5).floor().max(0.0) as usize;
    let y_hi = ((proj.v + radius - 0.5).ceil().max(0.0) as usize).min(height - 1);
    let x_lo = (proj.u - radius - 0.5).floor().max(0.0) as usize;
    let x_hi = ((proj.u + radius - 0.5).ceil().max(0.0) as usize).min(width - 1);
    let (cx, cy) = proj.pixel();
    for y in y_lo..=y_hi {
        let dy = y as f64 + 0.5 - proj.v;
        for x in x_lo..=x_hi {
            let dx = x as f64 + 0.5 - proj.u;
            if dx * dx + dy * dy <= r2 || (x == cx && y == cy) {
                f(x, y);
            }
        }
    }
    // The center pixel may sit outside the scanned window only when the
    // window is empty, which cannot happen for radius >= 0.5.
}

/// Renders `cloud` from `pose`. Points are splatted in index order; a pixel
/// takes a point's color, depth and index only when its depth is strictly
/// smaller than the current value, so equal depths keep the lower index.
pub fn render_view(
    cloud: &PointCloud,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    splat_radius: f64,
    z_near: f64,
    view_id: usize,
) -> ViewRender {
    let (w, h) = (intr.width, intr.height);
    let mut image = vec![[0u8; 3]; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut point_map = vec![NO_POINT; w * h];
    for (i, p) in cloud.positions().iter().enumerate() {
        let Some(proj) = project_point(p, intr, pose, z_near) else {
            continue;
        };
        let radius = splat_radius_pixels(intr, splat_radius, proj.depth);
        let color = cloud.color(i);
        for_each_splat_pixel(&proj, radius, w, h, |x, y| {
            let k = y * w + x;
            if proj.depth < depth[k] {
                depth[k] = proj.depth;
                image[k] = color;
                point_map[k] = i as u32;
            }
        });
    }
    ViewRender {
        view_id,
        intr: *intr,
        pose: *pose,
        camera_center: pose.center(),
        image,
        depth,
        point_map,
    }
}

/// A point labeled through one view's masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialEntry {
    /// Index of the source point.
    pub point: u32,
    #[serde(skip)]
    pub position: Vec3,
    pub label: ClassId,
    pub confidence: f64,
    /// Distance to the camera center, clamped below by `d_min`.
    pub cam_dist: f64,
}

/// Labeled points recovered from one camera.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPartialCloud {
    pub camera: usize,
    pub entries: Vec<PartialEntry>,
}

impl LabeledPartialCloud {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Transfers detection labels onto the points owning the masked pixels.
/// Each point keeps its highest-confidence candidate (ties: lower class id).
/// Entries are ordered by point index.
pub fn backproject_mask(
    view: &ViewRender,
    cloud: &PointCloud,
    detections: &[Detection2D],
    d_min: f64,
) -> Result<LabeledPartialCloud> {
    let mut best: BTreeMap<u32, (f64, ClassId)> = BTreeMap::new();
    for det in detections {
        if det.mask.width() != view.width() || det.mask.height() != view.height() {
            return Err(Error::Argument(format!(
                "mask is {}x{} but view {} is {}x{}",
                det.mask.width(),
                det.mask.height(),
                view.view_id,
                view.width(),
                view.height()
            )));
        }
        if det.label == UNLABELED {
            return Err(Error::Argument("detection with the unlabeled class".into()));
        }
        for (x, y) in det.mask.pixels() {
            let idx = view.point_map[view.idx(x, y)];
            if idx == NO_POINT {
                continue;
            }
            let candidate = (det.confidence, det.label);
            best.entry(idx)
                .and_modify(|cur| {
                    if candidate.0 > cur.0 || (candidate.0 == cur.0 && candidate.1 < cur.1) {
                        *cur = candidate;
                    }
                })
                .or_insert(candidate);
        }
    }
    let entries = best
        .into_iter()
        .map(|(point, (confidence, label))| {
            let position = cloud.position(point as usize);
            PartialEntry {
                point,
                position,
                label,
                confidence,
                cam_dist: (position - view.camera_center).norm().max(d_min),
            }
        })
        .collect();
    Ok(LabeledPartialCloud {
        camera: view.view_id,
        entries,
    })
}
