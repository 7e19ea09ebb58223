use std::path::{Path, PathBuf};

use labelfuse::manifest::{Manifest, MANIFEST_FILE};
use labelfuse::pipeline::{
    load_scene, run_in_memory, run_pipeline, PipelineConfig, Runner, EVAL_JSON, FUSED_CLOUD, REFINED,
};
use labelfuse::segment::{OracleNoise, SegmenterKind};

const SPEC: &str = r#"{
  "seed": 3,
  "primitives": [
    {"shape": {"type": "plane", "origin": [-5, -6, 0], "edge_u": [30, 0, 0], "edge_v": [0, 12, 0]},
     "class": "road", "density": 6},
    {"shape": {"type": "box", "center": [10, 9, 4], "half_extents": [6, 2, 4]},
     "class": "building", "density": 6},
    {"shape": {"type": "box", "center": [10, 0, 5], "half_extents": [2, 6, 0.3]},
     "class": "bridge", "density": 6}
  ],
  "trajectory": {"waypoints": [{"x": 0, "y": 0, "z": 2}, {"x": 20, "y": 0, "z": 2}], "spacing": 10}
}"#;

fn config(dir: &Path) -> PipelineConfig {
    let spec = dir.join("scene.json");
    std::fs::write(&spec, SPEC).unwrap();
    let mut cfg = PipelineConfig {
        scene: Some(spec.to_string_lossy().into_owned()),
        output: dir.join("out"),
        splat_radius: 0.3,
        workers: 2,
        segmenter: SegmenterKind::Oracle {
            noise: OracleNoise {
                flip_rate: 0.2,
                erosion: 0,
                jitter: 0.4,
            },
            seed: 9,
        },
        ..Default::default()
    };
    cfg.camera.width = 96;
    cfg.camera.height = 128;
    cfg.refinement.enabled = true;
    cfg.refinement.target_classes = vec!["bridge".into()];
    cfg
}

fn listing(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries.flatten() {
            out.push(e.path());
            out.extend(listing(&e.path()));
        }
    }
    out.sort();
    out
}

#[test]
fn staged_run_matches_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let staged = run_pipeline(&cfg, false).unwrap();
    let scene = load_scene(&cfg).unwrap();
    let memory = run_in_memory(&cfg, &scene).unwrap();
    assert_eq!(staged.fusion.labels, memory.fusion.labels);
    assert_eq!(staged.fusion.support, memory.fusion.support);
    assert_eq!(staged.refinement, memory.refinement);
    assert!(!memory.refined.is_empty(), "the bridge deck should trigger refinement");
    assert!(staged.eval.is_some());
    let manifest = Manifest::load(&cfg.output);
    assert!(manifest.complete);
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["scene", "segment", "refine", "fuse", "eval"]);
}

#[test]
fn resume_skips_fresh_stages_and_reruns_damaged_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let first = run_pipeline(&cfg, false).unwrap();
    assert!(first.skipped.is_empty());
    let fused = std::fs::read(cfg.output.join(FUSED_CLOUD)).unwrap();

    let again = run_pipeline(&cfg, true).unwrap();
    assert_eq!(again.skipped, ["scene", "segment", "refine", "fuse", "eval"]);

    // A damaged artifact reruns its stage. The rewrite is identical, so the
    // downstream stages stay fresh.
    std::fs::write(cfg.output.join(REFINED), "[]").unwrap();
    let repaired = run_pipeline(&cfg, true).unwrap();
    assert_eq!(repaired.skipped, ["scene", "segment", "fuse", "eval"]);
    assert_eq!(std::fs::read(cfg.output.join(FUSED_CLOUD)).unwrap(), fused);

    // Any parameter change reruns everything.
    let mut changed = cfg.clone();
    changed.fusion.epsilon = 0.2;
    let rerun = run_pipeline(&changed, true).unwrap();
    assert!(rerun.skipped.is_empty(), "{:?}", rerun.skipped);
}

#[test]
fn worker_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    let mut hashes = Vec::new();
    for workers in [1, 3] {
        cfg.workers = workers;
        cfg.output = tmp.path().join(format!("out{workers}"));
        run_pipeline(&cfg, false).unwrap();
        hashes.push(std::fs::read(cfg.output.join(FUSED_CLOUD)).unwrap());
        hashes.push(std::fs::read(cfg.output.join(EVAL_JSON)).unwrap());
    }
    assert_eq!(hashes[0], hashes[2]);
    assert_eq!(hashes[1], hashes[3]);
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.fusion.epsilon = 0.0;
    let err = run_pipeline(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!cfg.output.exists());

    let mut cfg = config(tmp.path());
    cfg.refinement.target_classes = vec!["spaceship".into()];
    assert_eq!(Runner::new(&cfg, false).err().unwrap().exit_code(), 2);
    assert!(!cfg.output.exists());
}

#[test]
fn failed_stage_leaves_an_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    cfg.segmenter = SegmenterKind::Remote {
        url: format!("http://127.0.0.1:{port}"),
        timeout_secs: 2.0,
        max_in_flight: 1,
    };
    let err = run_pipeline(&cfg, false).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().starts_with("[segment]"), "{err}");
    let manifest = Manifest::load(&cfg.output);
    assert!(!manifest.complete);
    assert!(manifest.error.is_some());
    assert!(manifest.stage("scene").is_some());
    assert!(manifest.stage("segment").is_none());
    assert!(listing(&cfg.output).contains(&cfg.output.join(MANIFEST_FILE)));
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("scene.json"), SPEC).unwrap();
    let path = tmp.path().join("run.json");
    std::fs::write(&path, r#"{"scene": "scene.json", "output": "out", "fusion": {"epsilon": 0.1}}"#).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.output, tmp.path().join("out"));
    assert_eq!(cfg.fusion.epsilon, 0.1);
    cfg.validate().unwrap();

    std::fs::write(&path, r#"{"scene": "scene.json", "bogus": 1}"#).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap_err().exit_code(), 2);
}
