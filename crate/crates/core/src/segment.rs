//! Prompted 2D segmentation of rendered views.
//!
//! Three interchangeable backends sit behind [`Segmenter`]:
//! - [`OracleSegmenter`] derives masks from ground-truth labels through the
//!   view's point map, with optional seeded corruption;
//! - [`MaskFileSegmenter`] reads `view_<index>.json` detection files written
//!   by an external model;
//! - [`RemoteSegmenter`] calls an HTTP service (`POST /segment`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, Detection2D, Mask, Rle};
use crate::model::{ClassId, LabelSet, PointCloud, UNLABELED};
use crate::render::ViewRender;
use crate::rng;

/// Detections below this confidence are dropped before back-projection.
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.25;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

/// Seeded corruption applied by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleNoise {
    /// Probability that a detection's label is replaced by another prompted class.
    pub flip_rate: f64,
    /// Erosion steps (3x3 element) applied to every mask.
    pub erosion: usize,
    /// Confidence is drawn uniformly from `[1 - jitter, 1]`.
    pub jitter: f64,
}

impl OracleNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::Config(format!("flip_rate {} outside [0, 1]", self.flip_rate)));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter {} outside [0, 1)", self.jitter)));
        }
        Ok(())
    }
}

fn default_timeout() -> f64 {
    60.0
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterKind {
    Oracle {
        #[serde(default)]
        noise: OracleNoise,
        #[serde(default)]
        seed: u64,
    },
    MaskFiles {
        dir: PathBuf,
    },
    Remote {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

impl Default for SegmenterKind {
    fn default() -> Self {
        SegmenterKind::Oracle {
            noise: OracleNoise::default(),
            seed: 0,
        }
    }
}

pub trait Segmenter: Send + Sync {
    /// Detections for `view` restricted to the `prompts` classes.
    fn segment(&self, view: &ViewRender, prompts: &[String]) -> Result<Vec<Detection2D>>;
}

/// Instantiates the backend described by `kind`. A remote service must
/// pass its health check first.
pub fn build_segmenter(
    kind: &SegmenterKind,
    cloud: &PointCloud,
    labels: &LabelSet,
) -> Result<Box<dyn Segmenter>> {
    Ok(match kind {
        SegmenterKind::Oracle { noise, seed } => {
            let gt = cloud.gt_labels().ok_or_else(|| {
                Error::Config("oracle segmenter requires ground-truth labels in the cloud".into())
            })?;
            Box::new(OracleSegmenter::new(gt.to_vec(), labels.clone(), *noise, *seed)?)
        }
        SegmenterKind::MaskFiles { dir } => Box::new(MaskFileSegmenter::new(dir, labels.clone())),
        SegmenterKind::Remote {
            url,
            timeout_secs,
            max_in_flight,
        } => {
            let remote = RemoteSegmenter::new(
                url,
                Duration::from_secs_f64(*timeout_secs),
                *max_in_flight,
                labels.clone(),
            )?;
            remote.health()?;
            Box::new(remote)
        }
    })
}

pub fn segment_image(
    view: &ViewRender,
    prompts: &[String],
    segmenter: &dyn Segmenter,
) -> Result<Vec<Detection2D>> {
    segmenter.segment(view, prompts)
}

pub fn apply_confidence_floor(detections: Vec<Detection2D>, floor: f64) -> Vec<Detection2D> {
    detections
        .into_iter()
        .filter(|d| d.confidence >= floor)
        .collect()
}

fn resolve_prompts(prompts: &[String], labels: &LabelSet) -> Result<Vec<ClassId>> {
    prompts
        .iter()
        .map(|p| {
            labels
                .class_id(p)
                .ok_or_else(|| Error::Argument(format!("unknown prompt class {p:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracle

pub struct OracleSegmenter {
    gt: Vec<ClassId>,
    labels: LabelSet,
    noise: OracleNoise,
    seed: u64,
}

impl OracleSegmenter {
    pub fn new(gt: Vec<ClassId>, labels: LabelSet, noise: OracleNoise, seed: u64) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            gt,
            labels,
            noise,
            seed,
        })
    }

    /// 8-connected components of equal prompted class over mapped pixels,
    /// ordered by class, then size (largest first), then first pixel.
    fn components(&self, view: &ViewRender, prompted: &[ClassId]) -> Vec<(ClassId, Vec<(usize, usize)>)> {
        let (w, h) = (view.width(), view.height());
        let class_at: Vec<ClassId> = view
            .point_map_buffer()
            .iter()
            .map(|&i| {
                if i == u32::MAX {
                    return UNLABELED;
                }
                let c = self.gt[i as usize];
                if prompted.contains(&c) {
                    c
                } else {
                    UNLABELED
                }
            })
            .collect();
        let mut seen = vec![false; w * h];
        let mut comps = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            let class = class_at[start];
            if class == UNLABELED || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let mut pixels = Vec::new();
            while let Some(k) = stack.pop() {
                let (x, y) = (k % w, k / w);
                pixels.push((x, y));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                            continue;
                        }
                        let n = ny as usize * w + nx as usize;
                        if !seen[n] && class_at[n] == class {
                            seen[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
            comps.push((class, start, pixels));
        }
        comps.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.len().cmp(&a.2.len())).then(a.1.cmp(&b.1)));
        comps.into_iter().map(|(c, _, p)| (c, p)).collect()
    }
}

const SALT_FLIP: u64 = 1;
const SALT_FLIP_PICK: u64 = 2;
const SALT_JITTER: u64 = 3;

impl Segmenter for OracleSegmenter {
    fn segment(&self, view: &ViewRender, prompts: &[String]) -> Result<Vec<Detection2D>> {
        let prompted = resolve_prompts(prompts, &self.labels)?;
        if prompted.is_empty() {
            return Ok(Vec::new());
        }
        let (w, h) = (view.width(), view.height());
        let mut out = Vec::new();
        for (k, (class, pixels)) in self.components(view, &prompted).into_iter().enumerate() {
            let key = |salt: u64| [self.seed, view.view_id as u64, k as u64, salt];
            let mut label = class;
            if self.noise.flip_rate > 0.0 && rng::unit(&key(SALT_FLIP)) < self.noise.flip_rate {
                let others: Vec<ClassId> = prompted.iter().copied().filter(|&c| c != class).collect();
                if !others.is_empty() {
                    label = others[rng::below(&key(SALT_FLIP_PICK), others.len() as u64) as usize];
                }
            }
            let mut mask = Mask::from_pixels(w, h, &pixels);
            if self.noise.erosion > 0 {
                mask = mask.erode(self.noise.erosion);
            }
            let confidence = if self.noise.jitter > 0.0 {
                1.0 - self.noise.jitter * rng::unit(&key(SALT_JITTER))
            } else {
                1.0
            };
            out.extend(Detection2D::from_mask(label, confidence, mask));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Wire / file format

/// One detection as stored in `view_<index>.json` and sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub label: String,
    pub confidence: f64,
    pub bbox: [usize; 4],
    pub mask_rle: Rle,
}

impl DetectionRecord {
    pub fn from_detection(det: &Detection2D, labels: &LabelSet) -> Self {
        Self {
            label: labels.name(det.label).unwrap_or("unlabeled").to_string(),
            confidence: det.confidence,
            bbox: [det.bbox.x0, det.bbox.y0, det.bbox.x1, det.bbox.y1],
            mask_rle: Rle::encode(&det.mask),
        }
    }

    /// Decodes and validates against a `width x height` view.
    pub fn to_detection(&self, label: ClassId, width: usize, height: usize) -> Result<Detection2D> {
        if self.mask_rle.size != [height, width] {
            return Err(Error::Data(format!(
                "mask size {:?} does not match view {height}x{width}",
                self.mask_rle.size
            )));
        }
        let [x0, y0, x1, y1] = self.bbox;
        let det = Detection2D {
            label,
            confidence: self.confidence,
            bbox: BBox { x0, y0, x1, y1 },
            mask: self.mask_rle.decode()?,
        };
        det.validate(width, height)?;
        Ok(det)
    }
}

/// Response body of `POST /segment`: a bare array or `{"detections": [...]}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SegmentResponse {
    List(Vec<DetectionRecord>),
    Wrapped { detections: Vec<DetectionRecord> },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_png_base64: String,
    pub prompts: Vec<String>,
}

pub fn detection_file(dir: &Path, view_id: usize) -> PathBuf {
    dir.join(format!("view_{view_id}.json"))
}

pub fn write_detections(
    dir: &Path,
    view_id: usize,
    detections: &[Detection2D],
    labels: &LabelSet,
) -> Result<PathBuf> {
    let records: Vec<DetectionRecord> = detections
        .iter()
        .map(|d| DetectionRecord::from_detection(d, labels))
        .collect();
    let path = detection_file(dir, view_id);
    let json = serde_json::to_string(&records).expect("records serialize");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Mask files

pub struct MaskFileSegmenter {
    dir: PathBuf,
    labels: LabelSet,
}

impl MaskFileSegmenter {
    pub fn new(dir: &Path, labels: LabelSet) -> Self {
        Self {
            dir: dir.to_path_buf(),
            labels,
        }
    }
}

impl Segmenter for MaskFileSegmenter {
    fn segment(&self, view: &ViewRender, prompts: &[String]) -> Result<Vec<Detection2D>> {
        let prompted = resolve_prompts(prompts, &self.labels)?;
        if prompted.is_empty() {
            return Ok(Vec::new());
        }
        let path = detection_file(&self.dir, view.view_id);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records: Vec<DetectionRecord> =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let mut out = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            let label = self.labels.class_id(&rec.label).ok_or_else(|| {
                Error::Data(format!("{}: entry {i} has unknown label {:?}", path.display(), rec.label))
            })?;
            if !prompted.contains(&label) {
                continue;
            }
            let det = rec
                .to_detection(label, view.width(), view.height())
                .map_err(|e| Error::Data(format!("{}: entry {i}: {e}", path.display())))?;
            out.push(det);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Remote

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteSegmenter {
    base: String,
    agent: ureq::Agent,
    labels: LabelSet,
    in_flight: InFlight,
}

impl RemoteSegmenter {
    pub fn new(url: &str, timeout: Duration, max_in_flight: usize, labels: LabelSet) -> Result<Self> {
        if !url.starts_with("http://") {
            return Err(Error::Config(format!("remote segmenter URL must be http://, got {url:?}")));
        }
        if max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(Self {
            base: url.trim_end_matches('/').to_string(),
            agent,
            labels,
            in_flight: InFlight::new(max_in_flight),
        })
    }

    /// `GET /healthz`; `Ok` on HTTP 200.
    pub fn health(&self) -> Result<()> {
        let transport = |message: String| Error::Transport { view: 0, message };
        let resp = self
            .agent
            .get(format!("{}/healthz", self.base))
            .call()
            .map_err(|e| transport(format!("health check failed: {e}")))?;
        match resp.status().as_u16() {
            200 => Ok(()),
            s => Err(transport(format!("health check returned HTTP {s}"))),
        }
    }

    fn call(&self, view: &ViewRender, prompts: &[String]) -> std::result::Result<Vec<Detection2D>, String> {
        let png = view.to_png().map_err(|e| e.to_string())?;
        let request = SegmentRequest {
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
            prompts: prompts.to_vec(),
        };
        let body = serde_json::to_vec(&request).expect("request serializes");
        let mut resp = {
            let _slot = self.in_flight.acquire();
            self.agent
                .post(format!("{}/segment", self.base))
                .header("content-type", "application/json")
                .send(&body[..])
                .map_err(|e| format!("request failed: {e}"))?
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| format!("reading response failed: {e}"))?;
        if status != 200 {
            return Err(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()));
        }
        let records = match serde_json::from_str::<SegmentResponse>(&text) {
            Ok(SegmentResponse::List(r)) | Ok(SegmentResponse::Wrapped { detections: r }) => r,
            Err(e) => return Err(format!("malformed response: {e}")),
        };
        // Case-insensitive match of returned labels against the prompts.
        let by_prompt: HashMap<String, &String> =
            prompts.iter().map(|p| (p.to_lowercase(), p)).collect();
        let mut out = Vec::new();
        for (i, rec) in records.iter().enumerate() {
            let prompt = by_prompt
                .get(&rec.label.to_lowercase())
                .ok_or_else(|| format!("entry {i}: label {:?} was not prompted", rec.label))?;
            let Some(label) = self.labels.class_id(prompt) else {
                log::debug!("dropping detection for {prompt:?}: not in the label set");
                continue;
            };
            let det = rec
                .to_detection(label, view.width(), view.height())
                .map_err(|e| format!("entry {i}: {e}"))?;
            out.push(det);
        }
        Ok(out)
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, view: &ViewRender, prompts: &[String]) -> Result<Vec<Detection2D>> {
        if prompts.is_empty() {
            return Ok(Vec::new());
        }
        self.call(view, prompts).map_err(|message| Error::Transport {
            view: view.view_id,
            message,
        })
    }
}
