use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use labelfuse::pipeline::{PipelineConfig, Runner, EVAL_TABLE, FUSION_SUMMARY};
use labelfuse::refine::MergeMode;
use labelfuse::segment::SegmenterKind;
use labelfuse::{Error, Result};

#[derive(Parser)]
#[command(name = "labelfuse", version, about = "Label point clouds by fusing 2D segmentations of rendered views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the scene into the output directory.
    Synth(Options),
    /// Render every trajectory view to PNG plus depth and point-index buffers.
    Render(Options),
    /// Segment every trajectory view into detection files.
    Segment(Options),
    /// Bird's-eye refinement of the configured target classes.
    Refine(Options),
    /// Fuse the per-view labels into the cloud.
    Fuse(Options),
    /// Score the fused labels against ground truth.
    Eval(Options),
    /// Every stage in order.
    Run(Options),
}

#[derive(Clone, Copy, ValueEnum)]
enum SegmenterArg {
    Oracle,
    Files,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Vote,
    Override,
}

#[derive(Args)]
struct Options {
    /// JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled scene name or scene spec file.
    #[arg(long, conflicts_with = "cloud")]
    scene: Option<String>,
    /// Input PLY cloud (needs --trajectory).
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    segmenter: Option<SegmenterArg>,
    /// Directory of view_<id>.json detection files.
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Base URL of a segmentation service.
    #[arg(long)]
    remote_url: Option<String>,
    /// Label-flip probability of the oracle segmenter.
    #[arg(long)]
    flip_rate: Option<f64>,
    /// Comma-separated classes to refine; enables refinement.
    #[arg(long, value_delimiter = ',')]
    refine_classes: Option<Vec<String>>,
    #[arg(long, value_enum)]
    merge_mode: Option<MergeArg>,
    /// Skip stages whose inputs and outputs are unchanged.
    #[arg(long)]
    resume: bool,
    /// Log progress (repeat for more detail).
    #[arg(long, short, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Options {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(scene) = &self.scene {
            cfg.scene = Some(scene.clone());
            cfg.cloud = None;
        }
        if let Some(cloud) = &self.cloud {
            cfg.cloud = Some(cloud.clone());
            cfg.scene = None;
        }
        if let Some(t) = &self.trajectory {
            cfg.trajectory = Some(t.clone());
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        let kind = self.segmenter.or(match (&self.mask_dir, &self.remote_url) {
            (Some(_), _) => Some(SegmenterArg::Files),
            (_, Some(_)) => Some(SegmenterArg::Remote),
            _ => None,
        });
        match kind {
            Some(SegmenterArg::Oracle) if !matches!(cfg.segmenter, SegmenterKind::Oracle { .. }) => {
                cfg.segmenter = SegmenterKind::default();
            }
            Some(SegmenterArg::Files) => {
                let dir = self.mask_dir.clone().or(match &cfg.segmenter {
                    SegmenterKind::MaskFiles { dir } => Some(dir.clone()),
                    _ => None,
                });
                let dir = dir.ok_or_else(|| Error::Config("--segmenter files needs --mask-dir".into()))?;
                cfg.segmenter = SegmenterKind::MaskFiles { dir };
            }
            Some(SegmenterArg::Remote) => {
                let (timeout_secs, max_in_flight, url) = match &cfg.segmenter {
                    SegmenterKind::Remote {
                        url,
                        timeout_secs,
                        max_in_flight,
                    } => (*timeout_secs, *max_in_flight, Some(url.clone())),
                    _ => (60.0, labelfuse::segment::DEFAULT_MAX_IN_FLIGHT, None),
                };
                let url = self
                    .remote_url
                    .clone()
                    .or(url)
                    .ok_or_else(|| Error::Config("--segmenter remote needs --remote-url".into()))?;
                cfg.segmenter = SegmenterKind::Remote {
                    url,
                    timeout_secs,
                    max_in_flight,
                };
            }
            _ => {}
        }
        if let Some(rate) = self.flip_rate {
            match &mut cfg.segmenter {
                SegmenterKind::Oracle { noise, .. } => noise.flip_rate = rate,
                _ => return Err(Error::Config("--flip-rate applies to the oracle segmenter only".into())),
            }
        }
        if let Some(classes) = &self.refine_classes {
            cfg.refinement.enabled = true;
            cfg.refinement.target_classes = classes.clone();
        }
        if let Some(mode) = self.merge_mode {
            cfg.refinement.merge_mode = match mode {
                MergeArg::Vote => MergeMode::Vote,
                MergeArg::Override => MergeMode::Override,
            };
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Until {
    Synth,
    Render,
    Segment,
    Refine,
    Fuse,
    Eval,
}

fn execute(until: Until, opts: &Options) -> Result<()> {
    let mut cfg = opts.config()?;
    if until == Until::Refine && !cfg.refinement.enabled {
        if cfg.refinement.target_classes.is_empty() {
            return Err(Error::Config("nothing to refine: pass --refine-classes".into()));
        }
        cfg.refinement.enabled = true;
    }
    let mut runner = Runner::new(&cfg, opts.resume)?;
    let outcome = runner.with_pool(|r| {
        r.scene()?;
        if until == Until::Render {
            return r.render();
        }
        if until >= Until::Segment {
            r.segment()?;
        }
        if until >= Until::Refine && cfg.refinement.enabled {
            r.refine()?;
        }
        if until >= Until::Fuse {
            r.fuse()?;
        }
        if until >= Until::Eval {
            r.eval()?;
        }
        Ok(())
    });
    let skipped = runner.finish(&outcome)?;
    outcome?;
    for stage in skipped {
        log::info!("{stage}: reused");
    }
    if until >= Until::Fuse {
        if let Ok(summary) = std::fs::read_to_string(cfg.output.join(FUSION_SUMMARY)) {
            log::info!("fusion summary: {summary}");
        }
    }
    if until >= Until::Eval {
        match std::fs::read_to_string(cfg.output.join(EVAL_TABLE)) {
            Ok(table) => print!("{table}"),
            Err(_) => println!("no ground truth; evaluation skipped"),
        }
    }
    println!("output: {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (until, opts) = match &cli.command {
        Command::Synth(o) => (Until::Synth, o),
        Command::Render(o) => (Until::Render, o),
        Command::Segment(o) => (Until::Segment, o),
        Command::Refine(o) => (Until::Refine, o),
        Command::Fuse(o) => (Until::Fuse, o),
        Command::Eval(o) => (Until::Eval, o),
        Command::Run(o) => (Until::Eval, o),
    };
    let level = match opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(until, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
