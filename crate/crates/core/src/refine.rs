//! Bird's-eye refinement: when a target class is detected along the
//! trajectory, the triggering camera is lifted by a few meters, aimed back at
//! the detected surface point and the view is segmented again. The most
//! confident elevated detection becomes an extra labeled partial cloud.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{look_at, z_up, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::fusion::FusionResult;
use crate::mask::Detection2D;
use crate::model::{ClassId, LabelSet, PointCloud, Vec3};
use crate::render::{backproject_mask, render_view, LabeledPartialCloud, ViewRender};
use crate::segment::{apply_confidence_floor, Segmenter};

pub const DEFAULT_TRIGGER_CONFIDENCE: f64 = 0.5;

pub fn default_vertical_offsets() -> Vec<f64> {
    vec![5.0, 10.0, 15.0]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Refined clouds join the vote as extra cameras.
    #[default]
    Vote,
    /// Refined labels replace fused labels on the points they cover.
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub enabled: bool,
    /// Class names that trigger refinement.
    pub target_classes: Vec<String>,
    pub trigger_confidence: f64,
    /// Camera lifts in meters, tried in order.
    pub vertical_offsets: Vec<f64>,
    pub merge_mode: MergeMode,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            target_classes: Vec::new(),
            trigger_confidence: DEFAULT_TRIGGER_CONFIDENCE,
            vertical_offsets: default_vertical_offsets(),
            merge_mode: MergeMode::Vote,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self, labels: &LabelSet) -> Result<()> {
        if !(self.trigger_confidence > 0.0 && self.trigger_confidence <= 1.0) {
            return Err(Error::Config(format!(
                "trigger_confidence must be in (0, 1], got {}",
                self.trigger_confidence
            )));
        }
        if let Some(dz) = self.vertical_offsets.iter().find(|dz| !(dz.is_finite() && **dz > 0.0)) {
            return Err(Error::Config(format!("vertical offsets must be positive, got {dz}")));
        }
        if self.enabled && self.target_classes.is_empty() {
            return Err(Error::Config("refinement enabled without target classes".into()));
        }
        if self.enabled && self.vertical_offsets.is_empty() {
            return Err(Error::Config("refinement enabled without vertical offsets".into()));
        }
        self.target_ids(labels).map(|_| ())
    }

    pub fn target_ids(&self, labels: &LabelSet) -> Result<Vec<ClassId>> {
        self.target_classes
            .iter()
            .map(|name| {
                labels
                    .class_id(name)
                    .ok_or_else(|| Error::Config(format!("unknown refinement class {name:?}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrigger {
    pub view: usize,
    /// Center of the triggering camera.
    pub camera_center: Vec3,
    pub detection: Detection2D,
    /// Cloud index of the surface point the elevated cameras look at.
    pub target_index: usize,
    pub target_point: Vec3,
}

/// Surface point under the bbox center, or the nearest mapped pixel inside
/// the bbox (smallest depth, first in row-major order on ties).
fn trigger_target(view: &ViewRender, det: &Detection2D) -> Option<usize> {
    let (cx, cy) = det.bbox.center_pixel();
    if let Some(i) = view.point_at(cx, cy) {
        return Some(i);
    }
    let mut best: Option<(f64, usize)> = None;
    for y in det.bbox.y0..det.bbox.y1 {
        for x in det.bbox.x0..det.bbox.x1 {
            if let Some(i) = view.point_at(x, y) {
                let d = view.depth(x, y);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
    }
    best.map(|(_, i)| i)
}

/// Triggers for one view, at most one per class (the most confident; the
/// earlier detection on ties), ordered by class id.
pub fn find_triggers(
    view: &ViewRender,
    detections: &[Detection2D],
    cloud: &PointCloud,
    cfg: &RefinementConfig,
    targets: &[ClassId],
) -> Vec<RefinementTrigger> {
    let mut best: Vec<(&Detection2D, usize)> = Vec::new();
    for det in detections {
        if !targets.contains(&det.label) || det.confidence < cfg.trigger_confidence {
            continue;
        }
        let Some(target) = trigger_target(view, det) else {
            continue;
        };
        match best.iter_mut().find(|(d, _)| d.label == det.label) {
            Some(slot) => {
                if det.confidence > slot.0.confidence {
                    *slot = (det, target);
                }
            }
            None => best.push((det, target)),
        }
    }
    best.sort_by_key(|(d, _)| d.label);
    best.into_iter()
        .map(|(det, target_index)| RefinementTrigger {
            view: view.view_id,
            camera_center: view.camera_center,
            detection: det.clone(),
            target_index,
            target_point: cloud.position(target_index),
        })
        .collect()
}

/// Shared inputs for the elevated renders.
pub struct RefineContext<'a> {
    pub cloud: &'a PointCloud,
    pub labels: &'a LabelSet,
    pub intr: CameraIntrinsics,
    pub splat_radius: f64,
    pub z_near: f64,
    pub d_min: f64,
    pub confidence_floor: f64,
    pub segmenter: &'a dyn Segmenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub view: usize,
    pub class: String,
    pub offsets_tried: Vec<f64>,
    pub chosen_offset: Option<f64>,
    pub chosen_confidence: Option<f64>,
    pub points_labeled: usize,
}

/// Runs the elevated views for one trigger. `first_view_id` is the id of the
/// first elevated render; offset `k` uses `first_view_id + k`.
pub fn refine(
    trigger: &RefinementTrigger,
    ctx: &RefineContext<'_>,
    offsets: &[f64],
    first_view_id: usize,
) -> Result<(Option<LabeledPartialCloud>, RefinementRecord)> {
    let class = trigger.detection.label;
    let class_name = ctx.labels.name(class).unwrap_or_default().to_string();
    let prompts = [class_name.clone()];
    let mut best: Option<(f64, ViewRender, Detection2D)> = None;
    for (k, &dz) in offsets.iter().enumerate() {
        let position = trigger.camera_center + Vec3::new(0.0, 0.0, dz);
        let pose = look_at(&position, &trigger.target_point, &z_up())?;
        let mut view = render_view(ctx.cloud, &ctx.intr, &pose, ctx.splat_radius, ctx.z_near, first_view_id + k);
        // Exact lifted center rather than the one recovered from the pose.
        view.camera_center = position;
        let detections = ctx.segmenter.segment(&view, &prompts).map_err(|e| match e {
            Error::Transport { view, message } => Error::Transport {
                view,
                message: format!("refinement offset {dz} m: {message}"),
            },
            other => other,
        })?;
        for det in apply_confidence_floor(detections, ctx.confidence_floor) {
            det.validate(view.width(), view.height())?;
            if det.label != class {
                continue;
            }
            // Strict comparison keeps the smaller offset on ties.
            if best.as_ref().map_or(true, |(c, _, _)| det.confidence > *c) {
                best = Some((det.confidence, view.clone(), det));
            }
        }
    }
    let mut record = RefinementRecord {
        view: trigger.view,
        class: class_name,
        offsets_tried: offsets.to_vec(),
        chosen_offset: None,
        chosen_confidence: None,
        points_labeled: 0,
    };
    let Some((confidence, view, det)) = best else {
        return Ok((None, record));
    };
    let partial = backproject_mask(&view, ctx.cloud, std::slice::from_ref(&det), ctx.d_min)?;
    record.chosen_offset = Some(offsets[view.view_id - first_view_id]);
    record.chosen_confidence = Some(confidence);
    record.points_labeled = partial.len();
    Ok((Some(partial), record))
}

/// Refines all triggers concurrently. Trigger `t` renders with view ids
/// starting at `first_view_id + t * offsets.len()`; results keep trigger order.
pub fn refine_all(
    triggers: &[RefinementTrigger],
    ctx: &RefineContext<'_>,
    offsets: &[f64],
    first_view_id: usize,
) -> Result<(Vec<LabeledPartialCloud>, Vec<RefinementRecord>)> {
    let results: Vec<_> = triggers
        .par_iter()
        .enumerate()
        .map(|(t, trigger)| refine(trigger, ctx, offsets, first_view_id + t * offsets.len()))
        .collect::<Result<_>>()?;
    let mut partials = Vec::new();
    let mut records = Vec::new();
    for (partial, record) in results {
        partials.extend(partial);
        records.push(record);
    }
    Ok((partials, records))
}

/// Fusion inputs after merging: vote mode appends the refined clouds as
/// cameras; override mode keeps them aside for [`apply_overrides`].
pub struct MergedInputs {
    pub partials: Vec<LabeledPartialCloud>,
    pub overrides: Vec<LabeledPartialCloud>,
}

pub fn merge_refined(
    mut base: Vec<LabeledPartialCloud>,
    refined: Vec<LabeledPartialCloud>,
    mode: MergeMode,
) -> MergedInputs {
    match mode {
        MergeMode::Vote => {
            base.extend(refined);
            MergedInputs {
                partials: base,
                overrides: Vec::new(),
            }
        }
        MergeMode::Override => MergedInputs {
            partials: base,
            overrides: refined,
        },
    }
}

/// Relabels every point covered by a refined cloud. A point covered by
/// several refined clouds takes the most confident entry (earlier cloud on
/// ties). Vote mass and support are left as fused.
pub fn apply_overrides(result: &mut FusionResult, overrides: &[LabeledPartialCloud]) {
    let mut best: Vec<Option<(f64, ClassId)>> = vec![None; result.len()];
    for partial in overrides {
        for e in &partial.entries {
            let slot = &mut best[e.point as usize];
            if slot.map_or(true, |(c, _)| e.confidence > c) {
                *slot = Some((e.confidence, e.label));
            }
        }
    }
    for (label, slot) in result.labels.iter_mut().zip(best) {
        if let Some((_, l)) = slot {
            *label = l;
        }
    }
}
