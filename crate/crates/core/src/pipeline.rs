//! End-to-end orchestration: scene → segment → refine → fuse → eval.
//!
//! Each stage reads its inputs from and writes its outputs to the output
//! directory, so stages can run separately (an external segmenter can fill
//! `detections/` between `render` and `fuse`). `MANIFEST.json` records every
//! artifact with its hash; with `resume` a stage whose inputs are unchanged
//! and whose outputs are intact is skipped.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{place_cameras, CameraIntrinsics, CameraPose, Trajectory, DEFAULT_Z_NEAR};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_masked, EvalReport};
use crate::fusion::{fuse, FusionParams, FusionResult};
use crate::manifest::{file_sha256, sha256_hex, Manifest, StageRecord};
use crate::mask::Detection2D;
use crate::model::{ClassId, LabelSet, PointCloud};
use crate::ply::{load_cloud, save_cloud};
use crate::refine::{
    apply_overrides, find_triggers, merge_refined, refine_all, RefineContext, RefinementConfig,
    RefinementRecord, RefinementTrigger,
};
use crate::render::{backproject_mask, render_view, LabeledPartialCloud, PartialEntry, ViewRender, DEFAULT_SPLAT_RADIUS};
use crate::segment::{
    apply_confidence_floor, build_segmenter, write_detections, MaskFileSegmenter, Segmenter, SegmenterKind,
    DEFAULT_CONFIDENCE_FLOOR,
};
use crate::synth::{self, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    pub z_near: f64,
    /// Yaw offsets from the trajectory heading, degrees.
    pub yaw_deg: Vec<f64>,
    pub pitch_deg: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            width: 480,
            height: 640,
            z_near: DEFAULT_Z_NEAR,
            yaw_deg: vec![0.0, 90.0, 180.0, 270.0],
            pitch_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input cloud (PLY). Exclusive with `scene`.
    pub cloud: Option<PathBuf>,
    /// Camera path (JSON). Required with `cloud`; overrides a scene's own.
    pub trajectory: Option<PathBuf>,
    /// Bundled fixture name or path to a scene spec JSON.
    pub scene: Option<String>,
    /// Class names (JSON array); the outdoor vocabulary when absent.
    pub labels: Option<PathBuf>,
    /// Classes to prompt for; every class when absent.
    pub prompts: Option<Vec<String>>,
    pub camera: CameraConfig,
    pub splat_radius: f64,
    pub fusion: FusionParams,
    pub segmenter: SegmenterKind,
    pub confidence_floor: f64,
    pub refinement: RefinementConfig,
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Overrides the oracle segmenter's seed and a generated scene's seed.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cloud: None,
            trajectory: None,
            scene: None,
            labels: None,
            prompts: None,
            camera: CameraConfig::default(),
            splat_radius: DEFAULT_SPLAT_RADIUS,
            fusion: FusionParams::default(),
            segmenter: SegmenterKind::default(),
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
            refinement: RefinementConfig::default(),
            output: PathBuf::from("labelfuse-out"),
            workers: 0,
            seed: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.cloud, &mut cfg.trajectory, &mut cfg.labels].into_iter().flatten() {
            resolve(base, p);
        }
        if let Some(scene) = &cfg.scene {
            if synth::fixture(scene).is_none() {
                cfg.scene = Some(base.join(scene).to_string_lossy().into_owned());
            }
        }
        if let SegmenterKind::MaskFiles { dir } = &mut cfg.segmenter {
            resolve(base, dir);
        }
        resolve(base, &mut cfg.output);
        Ok(cfg)
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.camera.fov_deg, self.camera.width, self.camera.height)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        match &self.labels {
            Some(path) => LabelSet::load(path),
            None => Ok(LabelSet::outdoor()),
        }
    }

    /// Checks values and referenced files without touching the output.
    pub fn validate(&self) -> Result<()> {
        let config = |msg: String| Err(Error::Config(msg));
        match (&self.cloud, &self.scene) {
            (Some(_), Some(_)) => return config("set either `cloud` or `scene`, not both".into()),
            (None, None) => return config("no input: set `cloud` or `scene`".into()),
            (Some(_), None) if self.trajectory.is_none() => {
                return config("`cloud` needs a `trajectory`".into());
            }
            _ => {}
        }
        for path in [&self.cloud, &self.trajectory, &self.labels].into_iter().flatten() {
            if !path.is_file() {
                return config(format!("file not found: {}", path.display()));
            }
        }
        if let Some(scene) = &self.scene {
            if synth::fixture(scene).is_none() && !Path::new(scene).is_file() {
                return config(format!(
                    "scene {scene:?} is neither a bundled fixture ({}) nor a file",
                    synth::FIXTURES.join(", ")
                ));
            }
        }
        self.intrinsics()?;
        let cam = &self.camera;
        if !(cam.z_near > 0.0 && cam.z_near.is_finite()) {
            return config(format!("z_near must be positive, got {}", cam.z_near));
        }
        if cam.yaw_deg.is_empty() || !cam.yaw_deg.iter().chain([&cam.pitch_deg]).all(|a| a.is_finite()) {
            return config("yaw_deg must be a non-empty list of finite angles".into());
        }
        if !(cam.pitch_deg.abs() < 90.0) {
            return config(format!("pitch_deg must be within (-90, 90), got {}", cam.pitch_deg));
        }
        if !(self.splat_radius > 0.0 && self.splat_radius.is_finite()) {
            return config(format!("splat_radius must be positive, got {}", self.splat_radius));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return config(format!("confidence_floor must be in [0, 1], got {}", self.confidence_floor));
        }
        self.fusion.validate()?;
        match &self.segmenter {
            SegmenterKind::Oracle { noise, .. } => noise.validate().map_err(|e| Error::Config(e.to_string()))?,
            SegmenterKind::MaskFiles { dir } => {
                if !dir.is_dir() {
                    return config(format!("mask directory not found: {}", dir.display()));
                }
            }
            SegmenterKind::Remote {
                url,
                timeout_secs,
                max_in_flight,
            } => {
                if !(url.starts_with("http://") || url.starts_with("https://")) {
                    return config(format!("remote url must be http(s), got {url:?}"));
                }
                if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) || *max_in_flight == 0 {
                    return config("remote timeout and max_in_flight must be positive".into());
                }
            }
        }
        let labels = self.label_set()?;
        if let Some(prompts) = &self.prompts {
            if let Some(p) = prompts.iter().find(|p| labels.class_id(p).is_none()) {
                return config(format!("unknown prompt class {p:?}"));
            }
        }
        self.refinement.validate(&labels)?;
        Ok(())
    }

    pub fn prompts(&self, labels: &LabelSet) -> Vec<String> {
        match &self.prompts {
            Some(p) => p.clone(),
            None => labels.class_names().map(str::to_string).collect(),
        }
    }

    /// The segmenter with the global seed applied.
    pub fn segmenter_kind(&self) -> SegmenterKind {
        match (&self.segmenter, self.seed) {
            (SegmenterKind::Oracle { noise, .. }, Some(seed)) => SegmenterKind::Oracle { noise: *noise, seed },
            (kind, _) => kind.clone(),
        }
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if self.workers > 0 {
            builder = builder.num_threads(self.workers);
        }
        builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
    }
}

/// Cloud, vocabulary and camera path.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: PointCloud,
    pub labels: LabelSet,
    pub trajectory: Trajectory,
}

/// Builds the scene from the configured sources.
pub fn load_scene(cfg: &PipelineConfig) -> Result<Scene> {
    let labels = cfg.label_set()?;
    let (cloud, mut trajectory) = match (&cfg.cloud, &cfg.scene) {
        (Some(path), _) => {
            let traj_path = cfg
                .trajectory
                .as_ref()
                .ok_or_else(|| Error::Config("`cloud` needs a `trajectory`".into()))?;
            (load_cloud(path)?, Trajectory::load(traj_path)?)
        }
        (None, Some(scene)) => {
            let mut spec = match synth::fixture(scene) {
                Some(spec) => spec,
                None => SceneSpec::load(Path::new(scene))?,
            };
            if let Some(seed) = cfg.seed {
                spec.seed = seed;
            }
            synth::generate(&spec, &labels)?
        }
        (None, None) => return Err(Error::Config("no input: set `cloud` or `scene`".into())),
    };
    if cfg.cloud.is_none() {
        if let Some(path) = &cfg.trajectory {
            trajectory = Trajectory::load(path)?;
        }
    }
    if let Some(gt) = cloud.gt_labels() {
        if let Some(l) = gt.iter().find(|&&l| !labels.contains(l)) {
            return Err(Error::Data(format!("ground-truth label {l} is outside the label set")));
        }
    }
    Ok(Scene {
        cloud,
        labels,
        trajectory,
    })
}

pub fn place_views(cfg: &PipelineConfig, trajectory: &Trajectory) -> Result<Vec<CameraPose>> {
    let yaws: Vec<f64> = cfg.camera.yaw_deg.iter().map(|d| d.to_radians()).collect();
    place_cameras(trajectory, &yaws, cfg.camera.pitch_deg.to_radians())
}

pub fn render(cfg: &PipelineConfig, cloud: &PointCloud, pose: &CameraPose, view_id: usize) -> Result<ViewRender> {
    Ok(render_view(
        cloud,
        &cfg.intrinsics()?,
        pose,
        cfg.splat_radius,
        cfg.camera.z_near,
        view_id,
    ))
}

/// Labeled points and refinement triggers of one trajectory view.
#[derive(Debug, Clone)]
pub struct ViewResult {
    pub partial: LabeledPartialCloud,
    pub triggers: Vec<RefinementTrigger>,
}

/// Render → segment → confidence floor → back-project for every view.
pub fn process_views(
    cfg: &PipelineConfig,
    scene: &Scene,
    poses: &[CameraPose],
    segmenter: &dyn Segmenter,
) -> Result<Vec<ViewResult>> {
    let prompts = cfg.prompts(&scene.labels);
    let targets = if cfg.refinement.enabled {
        cfg.refinement.target_ids(&scene.labels)?
    } else {
        Vec::new()
    };
    poses
        .par_iter()
        .enumerate()
        .map(|(id, pose)| {
            let view = render(cfg, &scene.cloud, pose, id)?;
            let detections = segmenter.segment(&view, &prompts)?;
            let detections = checked(detections, &view)?;
            let detections = apply_confidence_floor(detections, cfg.confidence_floor);
            let partial = backproject_mask(&view, &scene.cloud, &detections, cfg.fusion.d_min)?;
            let triggers = find_triggers(&view, &detections, &scene.cloud, &cfg.refinement, &targets);
            Ok(ViewResult { partial, triggers })
        })
        .collect()
}

fn checked(detections: Vec<Detection2D>, view: &ViewRender) -> Result<Vec<Detection2D>> {
    for d in &detections {
        d.validate(view.width(), view.height())
            .map_err(|e| Error::Data(format!("view {}: {e}", view.view_id)))?;
    }
    Ok(detections)
}

/// Runs the elevated views for every trigger, in view order.
pub fn run_refinement(
    cfg: &PipelineConfig,
    scene: &Scene,
    view_count: usize,
    triggers: &[RefinementTrigger],
    segmenter: &dyn Segmenter,
) -> Result<(Vec<LabeledPartialCloud>, Vec<RefinementRecord>)> {
    let ctx = RefineContext {
        cloud: &scene.cloud,
        labels: &scene.labels,
        intr: cfg.intrinsics()?,
        splat_radius: cfg.splat_radius,
        z_near: cfg.camera.z_near,
        d_min: cfg.fusion.d_min,
        confidence_floor: cfg.confidence_floor,
        segmenter,
    };
    refine_all(triggers, &ctx, &cfg.refinement.vertical_offsets, view_count)
}

/// Fuses base and refined partial clouds under the configured merge mode.
pub fn fuse_all(
    cfg: &PipelineConfig,
    scene: &Scene,
    base: Vec<LabeledPartialCloud>,
    refined: Vec<LabeledPartialCloud>,
) -> Result<FusionResult> {
    let merged = merge_refined(base, refined, cfg.refinement.merge_mode);
    let mut result = fuse(&scene.cloud, &merged.partials, &cfg.fusion, scene.labels.len())?;
    apply_overrides(&mut result, &merged.overrides);
    Ok(result)
}

/// Result of an in-memory run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fusion: FusionResult,
    pub partials: Vec<LabeledPartialCloud>,
    pub refined: Vec<LabeledPartialCloud>,
    pub refinement: Vec<RefinementRecord>,
}

/// The whole pipeline without touching the disk.
pub fn run_in_memory(cfg: &PipelineConfig, scene: &Scene) -> Result<RunOutput> {
    cfg.thread_pool()?.install(|| {
        let segmenter = build_segmenter(&cfg.segmenter_kind(), &scene.cloud, &scene.labels)?;
        let poses = place_views(cfg, &scene.trajectory)?;
        let views = process_views(cfg, scene, &poses, segmenter.as_ref())?;
        let mut partials = Vec::with_capacity(views.len());
        let mut triggers = Vec::new();
        for v in views {
            partials.push(v.partial);
            triggers.extend(v.triggers);
        }
        let (refined, refinement) = if cfg.refinement.enabled {
            run_refinement(cfg, scene, poses.len(), &triggers, segmenter.as_ref())?
        } else {
            (Vec::new(), Vec::new())
        };
        let fusion = fuse_all(cfg, scene, partials.clone(), refined.clone())?;
        Ok(RunOutput {
            fusion,
            partials,
            refined,
            refinement,
        })
    })
}

// ---------------------------------------------------------------------------
// Staged runs over an output directory

pub const SCENE_CLOUD: &str = "scene/cloud.ply";
pub const SCENE_TRAJECTORY: &str = "scene/trajectory.json";
pub const SCENE_LABELS: &str = "scene/labels.json";
pub const CAMERAS: &str = "cameras.json";
pub const VIEWS_DIR: &str = "views";
pub const DETECTIONS_DIR: &str = "detections";
pub const REFINED: &str = "refine/refined.json";
pub const REFINE_REPORT: &str = "refine/report.json";
pub const FUSED_CLOUD: &str = "fused.ply";
pub const FUSION_SUMMARY: &str = "fusion.json";
pub const SUPPORT: &str = "support.bin";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_TABLE: &str = "eval.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Scene,
    Render,
    Segment,
    Refine,
    Fuse,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Scene => "scene",
            Stage::Render => "render",
            Stage::Segment => "segment",
            Stage::Refine => "refine",
            Stage::Fuse => "fuse",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    view: usize,
    center: [f64; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CamerasFile {
    intrinsics: CameraIntrinsics,
    views: Vec<CameraRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartialRecord {
    camera: usize,
    entries: Vec<PartialEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalFile {
    /// All points with a ground-truth label.
    all: EvalReport,
    /// Only points that received at least one vote.
    supported: EvalReport,
    support_fraction: f64,
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fusion: FusionResult,
    pub eval: Option<EvalReport>,
    pub refinement: Vec<RefinementRecord>,
    /// Stages skipped because their outputs were up to date.
    pub skipped: Vec<&'static str>,
}

/// Executes stages against `cfg.output`, tracking them in the manifest.
pub struct Runner<'a> {
    cfg: &'a PipelineConfig,
    dir: PathBuf,
    resume: bool,
    manifest: Manifest,
    config_hash: String,
    skipped: Vec<&'static str>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl<'a> Runner<'a> {
    /// Validates `cfg` and prepares the output directory. Nothing is written
    /// when validation fails.
    pub fn new(cfg: &'a PipelineConfig, resume: bool) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.output.clone();
        create_dir(&dir)?;
        let manifest = Manifest::load(&dir);
        // Output location and thread count never change results.
        let mut hashed = cfg.clone();
        hashed.output = PathBuf::new();
        hashed.workers = 0;
        let config_hash = sha256_hex(serde_json::to_string(&hashed).expect("config serializes").as_bytes());
        Ok(Self {
            cfg,
            dir,
            resume,
            manifest,
            config_hash,
            skipped: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn upstream_hash(&self, stages: &[Stage]) -> String {
        let mut text = self.config_hash.clone();
        for s in stages {
            if let Some(rec) = self.manifest.stage(s.name()) {
                for (k, v) in &rec.outputs {
                    text.push_str(&format!("\n{k}={v}"));
                }
            }
        }
        text
    }

    /// Runs `body` unless resuming and the stage is fresh. `body` returns
    /// the paths it wrote, relative to the output directory.
    fn stage(
        &mut self,
        stage: Stage,
        upstream: &[Stage],
        body: impl FnOnce(&Self) -> Result<Vec<String>>,
    ) -> Result<()> {
        let input_hash = sha256_hex(format!("{}\n{}", stage.name(), self.upstream_hash(upstream)).as_bytes());
        if self.resume && self.manifest.is_fresh(&self.dir, stage.name(), &input_hash) {
            log::info!("{}: up to date, skipped", stage.name());
            self.skipped.push(stage.name());
            return Ok(());
        }
        self.manifest.complete = false;
        self.manifest.save(&self.dir)?;
        log::info!("{}: running", stage.name());
        let outputs = body(self).map_err(|e| e.in_stage(stage.name()))?;
        let mut hashes = std::collections::BTreeMap::new();
        for rel in outputs {
            let hash = file_sha256(&self.path(&rel))?;
            hashes.insert(rel, hash);
        }
        self.manifest.upsert(StageRecord {
            name: stage.name().to_string(),
            input_hash,
            outputs: hashes,
        });
        self.manifest.save(&self.dir)
    }

    fn load_staged_scene(&self) -> Result<Scene> {
        let labels = LabelSet::load(&self.path(SCENE_LABELS))?;
        let cloud = load_cloud(&self.path(SCENE_CLOUD))?;
        let trajectory = Trajectory::load(&self.path(SCENE_TRAJECTORY))?;
        Ok(Scene {
            cloud,
            labels,
            trajectory,
        })
    }

    fn require(&self, rel: &str, producer: Stage) -> Result<()> {
        if self.path(rel).exists() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "{} is missing; run the `{}` stage first",
                self.path(rel).display(),
                producer.name()
            )))
        }
    }

    pub fn scene(&mut self) -> Result<()> {
        let cfg = self.cfg;
        self.stage(Stage::Scene, &[], |r| {
            let scene = load_scene(cfg)?;
            create_dir(&r.path("scene"))?;
            save_cloud(&scene.cloud, scene.cloud.gt_labels(), &scene.labels, &r.path(SCENE_CLOUD))?;
            scene.trajectory.save(&r.path(SCENE_TRAJECTORY))?;
            scene.labels.save(&r.path(SCENE_LABELS))?;
            Ok(vec![SCENE_CLOUD.into(), SCENE_TRAJECTORY.into(), SCENE_LABELS.into()])
        })
    }

    fn write_cameras(&self, poses: &[CameraPose]) -> Result<()> {
        let file = CamerasFile {
            intrinsics: self.cfg.intrinsics()?,
            views: poses
                .iter()
                .enumerate()
                .map(|(view, p)| CameraRecord {
                    view,
                    center: p.center().into(),
                    rotation: p.rotation.transpose().into(),
                    translation: p.translation.into(),
                })
                .collect(),
        };
        write_json(&self.path(CAMERAS), &file)
    }

    /// Exports every trajectory view (PNG, depth, point map).
    pub fn render(&mut self) -> Result<()> {
        let cfg = self.cfg;
        self.stage(Stage::Render, &[Stage::Scene], |r| {
            r.require(SCENE_CLOUD, Stage::Scene)?;
            let scene = r.load_staged_scene()?;
            let poses = place_views(cfg, &scene.trajectory)?;
            let dir = r.path(VIEWS_DIR);
            create_dir(&dir)?;
            poses
                .par_iter()
                .enumerate()
                .try_for_each(|(id, pose)| render(cfg, &scene.cloud, pose, id)?.export(&dir, &view_stem(id)))?;
            r.write_cameras(&poses)?;
            let mut out = vec![CAMERAS.to_string()];
            for id in 0..poses.len() {
                for ext in ["png", "depth.bin", "index.bin", "buffers.json"] {
                    out.push(format!("{VIEWS_DIR}/{}.{ext}", view_stem(id)));
                }
            }
            Ok(out)
        })
    }

    /// Segments every trajectory view into `detections/`.
    pub fn segment(&mut self) -> Result<()> {
        let cfg = self.cfg;
        self.stage(Stage::Segment, &[Stage::Scene], |r| {
            r.require(SCENE_CLOUD, Stage::Scene)?;
            let scene = r.load_staged_scene()?;
            let segmenter = build_segmenter(&cfg.segmenter_kind(), &scene.cloud, &scene.labels)?;
            let poses = place_views(cfg, &scene.trajectory)?;
            let prompts = cfg.prompts(&scene.labels);
            let dir = r.path(DETECTIONS_DIR);
            create_dir(&dir)?;
            poses.par_iter().enumerate().try_for_each(|(id, pose)| {
                let view = render(cfg, &scene.cloud, pose, id)?;
                let detections = checked(segmenter.segment(&view, &prompts)?, &view)?;
                write_detections(&dir, id, &detections, &scene.labels).map(|_| ())
            })?;
            r.write_cameras(&poses)?;
            let mut out = vec![CAMERAS.to_string()];
            out.extend((0..poses.len()).map(|id| format!("{DETECTIONS_DIR}/view_{id}.json")));
            Ok(out)
        })
    }

    /// Base partial clouds and triggers from the stored detections.
    fn staged_views(&self, scene: &Scene) -> Result<(usize, Vec<ViewResult>)> {
        self.require(DETECTIONS_DIR, Stage::Segment)?;
        let poses = place_views(self.cfg, &scene.trajectory)?;
        let files = MaskFileSegmenter::new(&self.path(DETECTIONS_DIR), scene.labels.clone());
        let views = process_views(self.cfg, scene, &poses, &files)?;
        Ok((poses.len(), views))
    }

    pub fn refine(&mut self) -> Result<()> {
        let cfg = self.cfg;
        self.stage(Stage::Refine, &[Stage::Scene, Stage::Segment], |r| {
            let scene = r.load_staged_scene()?;
            let (count, views) = r.staged_views(&scene)?;
            let triggers: Vec<RefinementTrigger> = views.into_iter().flat_map(|v| v.triggers).collect();
            let segmenter = build_segmenter(&cfg.segmenter_kind(), &scene.cloud, &scene.labels)?;
            let (refined, records) = run_refinement(cfg, &scene, count, &triggers, segmenter.as_ref())?;
            let stored: Vec<PartialRecord> = refined
                .into_iter()
                .map(|p| PartialRecord {
                    camera: p.camera,
                    entries: p.entries,
                })
                .collect();
            write_json(&r.path(REFINED), &stored)?;
            write_json(&r.path(REFINE_REPORT), &records)?;
            Ok(vec![REFINED.into(), REFINE_REPORT.into()])
        })
    }

    fn load_refined(&self, scene: &Scene) -> Result<Vec<LabeledPartialCloud>> {
        let path = self.path(REFINED);
        let stored: Vec<PartialRecord> = read_json(&path)?;
        stored
            .into_iter()
            .map(|rec| {
                let mut entries = rec.entries;
                for e in &mut entries {
                    if e.point as usize >= scene.cloud.len() || !scene.labels.contains(e.label) {
                        return Err(Error::Data(format!(
                            "{}: entry for point {} (label {}) does not fit the scene",
                            path.display(),
                            e.point,
                            e.label
                        )));
                    }
                    e.position = scene.cloud.position(e.point as usize);
                }
                Ok(LabeledPartialCloud {
                    camera: rec.camera,
                    entries,
                })
            })
            .collect()
    }

    pub fn fuse(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let upstream: &[Stage] = if cfg.refinement.enabled {
            &[Stage::Scene, Stage::Segment, Stage::Refine]
        } else {
            &[Stage::Scene, Stage::Segment]
        };
        self.stage(Stage::Fuse, upstream, |r| {
            let scene = r.load_staged_scene()?;
            let (_, views) = r.staged_views(&scene)?;
            let base: Vec<LabeledPartialCloud> = views.into_iter().map(|v| v.partial).collect();
            let refined = if cfg.refinement.enabled {
                r.require(REFINED, Stage::Refine)?;
                r.load_refined(&scene)?
            } else {
                Vec::new()
            };
            let result = fuse_all(cfg, &scene, base, refined)?;
            save_cloud(&scene.cloud, Some(&result.labels), &scene.labels, &r.path(FUSED_CLOUD))?;
            write_json(&r.path(FUSION_SUMMARY), &result.summary(&scene.labels))?;
            let support: Vec<u8> = result.support.iter().flat_map(|s| s.to_le_bytes()).collect();
            std::fs::write(r.path(SUPPORT), support).map_err(|e| Error::io(r.path(SUPPORT), e))?;
            Ok(vec![FUSED_CLOUD.into(), FUSION_SUMMARY.into(), SUPPORT.into()])
        })
    }

    fn load_fused(&self) -> Result<FusionResult> {
        self.require(FUSED_CLOUD, Stage::Fuse)?;
        let fused = load_cloud(&self.path(FUSED_CLOUD))?;
        let labels = fused
            .gt_labels()
            .ok_or_else(|| Error::Data(format!("{FUSED_CLOUD} has no label property")))?
            .to_vec();
        let path = self.path(SUPPORT);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != 4 * labels.len() {
            return Err(Error::Data(format!("{} does not match {FUSED_CLOUD}", path.display())));
        }
        let support: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(FusionResult {
            vote_mass: vec![0.0; labels.len()],
            labels,
            support,
        })
    }

    /// Scores the fused labels; a no-op without ground truth.
    pub fn eval(&mut self) -> Result<()> {
        self.stage(Stage::Eval, &[Stage::Scene, Stage::Fuse], |r| {
            let scene = r.load_staged_scene()?;
            let Some(gt) = scene.cloud.gt_labels() else {
                log::info!("eval: the cloud has no ground-truth labels");
                return Ok(Vec::new());
            };
            let fused = r.load_fused()?;
            let all = evaluate(&fused.labels, gt, &scene.labels)?;
            let supported = evaluate_masked(&fused.labels, gt, |i| fused.support[i] > 0, &scene.labels)?;
            let covered = fused.support.iter().filter(|&&s| s > 0).count();
            let file = EvalFile {
                support_fraction: if fused.is_empty() {
                    0.0
                } else {
                    covered as f64 / fused.len() as f64
                },
                all: all.clone(),
                supported,
            };
            write_json(&r.path(EVAL_JSON), &file)?;
            let table = all.to_table(&scene.labels);
            std::fs::write(r.path(EVAL_TABLE), &table).map_err(|e| Error::io(r.path(EVAL_TABLE), e))?;
            Ok(vec![EVAL_JSON.into(), EVAL_TABLE.into()])
        })
    }

    /// Marks the manifest complete (or failed) and returns what was skipped.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<Vec<&'static str>> {
        match outcome {
            Ok(()) => {
                self.manifest.complete = true;
                self.manifest.error = None;
            }
            Err(e) => {
                self.manifest.complete = false;
                self.manifest.error = Some(e.to_string());
            }
        }
        self.manifest.save(&self.dir)?;
        Ok(self.skipped)
    }

    /// Runs `f` on the configured worker pool.
    pub fn with_pool<T: Send>(&mut self, f: impl FnOnce(&mut Self) -> Result<T> + Send) -> Result<T> {
        let pool = self.cfg.thread_pool()?;
        pool.install(|| f(self))
    }
}

fn view_stem(id: usize) -> String {
    format!("view_{id}")
}

/// Full staged run: scene, segment, refine (when enabled), fuse, eval.
pub fn run_pipeline(cfg: &PipelineConfig, resume: bool) -> Result<PipelineOutput> {
    let mut runner = Runner::new(cfg, resume)?;
    let outcome = runner.with_pool(|r| {
        r.scene()?;
        r.segment()?;
        if cfg.refinement.enabled {
            r.refine()?;
        }
        r.fuse()?;
        r.eval()
    });
    let dir = cfg.output.clone();
    let skipped = runner.finish(&outcome)?;
    outcome?;
    let staged = |rel: &str| dir.join(rel);
    let fused = load_cloud(&staged(FUSED_CLOUD))?;
    let labels: Vec<ClassId> = fused.gt_labels().map(<[ClassId]>::to_vec).unwrap_or_default();
    let support_bytes = std::fs::read(staged(SUPPORT)).map_err(|e| Error::io(staged(SUPPORT), e))?;
    let support: Vec<u32> = support_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let eval = if staged(EVAL_JSON).exists() {
        Some(read_json::<EvalFile>(&staged(EVAL_JSON))?.all)
    } else {
        None
    };
    let refinement = if cfg.refinement.enabled {
        read_json(&staged(REFINE_REPORT))?
    } else {
        Vec::new()
    };
    Ok(PipelineOutput {
        fusion: FusionResult {
            vote_mass: vec![0.0; labels.len()],
            labels,
            support,
        },
        eval,
        refinement,
        skipped,
    })
}
