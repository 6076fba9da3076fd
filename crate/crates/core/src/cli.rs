//! Command-line front end.
//!
//! Every subcommand resolves its settings as flags over an optional
//! `--config` JSON file over defaults, echoes the result to stderr as JSON
//! (usable as a `--config` file), then runs.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, CaptureProtocol, DatasetConfig};
use crate::engine::{self, Catalog, Engine, EngineConfig, Service, LATENCY_FILE};
use crate::error::{Error, Result};
use crate::gsnet::{GanForm, Mode, PerceptualBackbone};
use crate::imaging::{self, Image, SoftMask};
use crate::metrics::{self, MetricReport};
use crate::perception::{BackendKind, Backends, PerceptionConfig};
use crate::trainer::{self, NetSize, TrainConfig};
use crate::video;

#[derive(Debug, Parser)]
#[command(name = "tryon", version, about = "Per-garment virtual try-on toolkit")]
pub struct Cli {
    /// JSON file with settings; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// print the resolved settings to stdout and exit
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export the timed capture guide (JSON plus pose illustrations)
    CaptureGuide(CaptureGuideArgs),
    /// Build a per-garment training dataset from a capture video
    BuildDataset(BuildDatasetArgs),
    /// Check a dataset's files and content hash
    ValidateDataset(ValidateDatasetArgs),
    /// Train a garment synthesis network
    Train(TrainArgs),
    /// Compare predicted and ground-truth videos
    Evaluate(EvaluateArgs),
    /// Run try-on over a video file
    InferVideo(InferVideoArgs),
    /// Serve the live try-on API
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CaptureGuideArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// illustration size as HEIGHTxWIDTH
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureGuideConfig {
    pub out: Option<PathBuf>,
    pub image_size: [usize; 2],
    pub protocol: CaptureProtocol,
}

impl Default for CaptureGuideConfig {
    fn default() -> Self {
        Self {
            out: None,
            image_size: [512, 288],
            protocol: CaptureProtocol::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long)]
    pub pose_backend: Option<BackendKind>,
    #[arg(long)]
    pub densepose_backend: Option<BackendKind>,
    #[arg(long)]
    pub parse_backend: Option<BackendKind>,
    /// directory of external backend adapters (overrides the environment)
    #[arg(long)]
    pub backend_dir: Option<PathBuf>,
    #[arg(long)]
    pub stub_seed: Option<u64>,
}

impl BackendArgs {
    fn apply(&self, p: &mut PerceptionConfig) {
        set(&mut p.pose, self.pose_backend);
        set(&mut p.densepose, self.densepose_backend);
        set(&mut p.parse, self.parse_backend);
        set(&mut p.stub_seed, self.stub_seed);
        if self.backend_dir.is_some() {
            p.backend_dir = self.backend_dir.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    /// capture video (.y4m or a directory of PNG frames)
    #[arg(long)]
    pub video: Option<PathBuf>,
    #[arg(long)]
    pub garment_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub roi_size: Option<usize>,
    #[arg(long)]
    pub working_short_side: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildDatasetConfig {
    pub video: Option<PathBuf>,
    pub garment_id: Option<String>,
    pub out: Option<PathBuf>,
    /// frame rate assumed for PNG directories
    pub fps: f64,
    pub dataset: DatasetConfig,
    pub perception: PerceptionConfig,
}

impl Default for BuildDatasetConfig {
    fn default() -> Self {
        Self {
            video: None,
            garment_id: None,
            out: None,
            fps: video::DEFAULT_FPS,
            dataset: DatasetConfig::default(),
            perception: PerceptionConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateDatasetArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateDatasetConfig {
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// continue from a checkpoint written by an earlier run
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub net: Option<NetArg>,
    #[arg(long)]
    pub gan: Option<GanArg>,
    /// none, identity, or vgg19:<weights file>
    #[arg(long, value_parser = parse_backbone)]
    pub perceptual: Option<PerceptualBackbone>,
    #[arg(long)]
    pub roi_size: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub decay_epochs: Option<u64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NetArg {
    Full,
    Tiny,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum GanArg {
    Log,
    Lsgan,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// comma-separated: ssim, l1
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// resize both videos to HEIGHTxWIDTH before comparing
    #[arg(long, value_parser = parse_size)]
    pub resize: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub metrics: Vec<String>,
    pub report: Option<PathBuf>,
    pub resize: Option<[usize; 2]>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            pred: None,
            gt: None,
            metrics: vec!["ssim".into(), "l1".into()],
            report: None,
            resize: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct InferVideoArgs {
    /// input video (.y4m or a directory of PNG frames)
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// garment id from the catalog, or a checkpoint file
    #[arg(long)]
    pub garment: Option<String>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// output as a .y4m video or a PNG frame directory
    #[arg(long)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Y4m,
    Png,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferVideoConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub garment: Option<String>,
    pub catalog: Option<PathBuf>,
    pub format: OutputFormat,
    pub fps: f64,
    pub engine: EngineConfig,
    pub perception: PerceptionConfig,
}

impl Default for InferVideoConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            garment: None,
            catalog: None,
            format: OutputFormat::default(),
            fps: video::DEFAULT_FPS,
            engine: EngineConfig::default(),
            perception: PerceptionConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[command(flatten)]
    pub backends: BackendArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub catalog: Option<PathBuf>,
    pub host: String,
    pub port: u16,
    pub engine: EngineConfig,
    pub perception: PerceptionConfig,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            host: "127.0.0.1".into(),
            port: 8080,
            engine: EngineConfig::default(),
            perception: PerceptionConfig::default(),
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_size(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HEIGHTxWIDTH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (p(h)?, p(w)?);
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok([h, w])
}

fn parse_backbone(s: &str) -> std::result::Result<PerceptualBackbone, String> {
    match s {
        "none" => Ok(PerceptualBackbone::None),
        "identity" => Ok(PerceptualBackbone::Identity),
        _ => match s.strip_prefix("vgg19:") {
            Some(p) if !p.is_empty() => Ok(PerceptualBackbone::Vgg19 { weights: p.into() }),
            _ => Err(format!("expected none, identity or vgg19:<weights>, got {s:?}")),
        },
    }
}

fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::config(format!("missing required setting --{flag}")))
}

/// Defaults, then the file.
fn base_config<T: DeserializeOwned + Default>(file: Option<&Path>) -> Result<T> {
    match file {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))
        }
    }
}

/// Resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Resolved {
    CaptureGuide(CaptureGuideConfig),
    BuildDataset(BuildDatasetConfig),
    ValidateDataset(ValidateDatasetConfig),
    Train(TrainCliConfig),
    Evaluate(EvaluateConfig),
    InferVideo(InferVideoConfig),
    Serve(ServeConfig),
}

pub fn resolve(cli: &Cli) -> Result<Resolved> {
    let file = cli.config.as_deref();
    Ok(match &cli.command {
        Command::CaptureGuide(a) => {
            let mut c: CaptureGuideConfig = base_config(file)?;
            set(&mut c.out, a.out.clone().map(Some));
            set(&mut c.image_size, a.image_size);
            Resolved::CaptureGuide(c)
        }
        Command::BuildDataset(a) => {
            let mut c: BuildDatasetConfig = base_config(file)?;
            set(&mut c.video, a.video.clone().map(Some));
            set(&mut c.garment_id, a.garment_id.clone().map(Some));
            set(&mut c.out, a.out.clone().map(Some));
            set(&mut c.fps, a.fps);
            set(&mut c.dataset.roi_size, a.roi_size);
            set(&mut c.dataset.working_short_side, a.working_short_side);
            a.backends.apply(&mut c.perception);
            Resolved::BuildDataset(c)
        }
        Command::ValidateDataset(a) => {
            let mut c: ValidateDatasetConfig = base_config(file)?;
            set(&mut c.dataset, a.dataset.clone().map(Some));
            Resolved::ValidateDataset(c)
        }
        Command::Train(a) => {
            let mut c: TrainCliConfig = base_config(file)?;
            set(&mut c.dataset, a.dataset.clone().map(Some));
            set(&mut c.out, a.out.clone().map(Some));
            set(&mut c.resume, a.resume.clone().map(Some));
            let t = &mut c.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.lambda0, a.lambda0);
            set(&mut t.lambda1, a.lambda1);
            set(&mut t.mode, a.mode);
            set(&mut t.seed, a.seed);
            set(
                &mut t.net,
                a.net.map(|n| match n {
                    NetArg::Full => NetSize::Full,
                    NetArg::Tiny => NetSize::Tiny,
                }),
            );
            set(
                &mut t.gan,
                a.gan.map(|g| match g {
                    GanArg::Log => GanForm::Log,
                    GanArg::Lsgan => GanForm::Lsgan,
                }),
            );
            set(&mut t.perceptual, a.perceptual.clone());
            set(&mut t.roi_size, a.roi_size);
            set(&mut t.max_steps, a.max_steps);
            set(&mut t.decay_epochs, a.decay_epochs);
            Resolved::Train(c)
        }
        Command::Evaluate(a) => {
            let mut c: EvaluateConfig = base_config(file)?;
            set(&mut c.pred, a.pred.clone().map(Some));
            set(&mut c.gt, a.gt.clone().map(Some));
            set(&mut c.metrics, a.metrics.clone());
            set(&mut c.report, a.report.clone().map(Some));
            set(&mut c.resize, a.resize.map(Some));
            Resolved::Evaluate(c)
        }
        Command::InferVideo(a) => {
            let mut c: InferVideoConfig = base_config(file)?;
            set(&mut c.input, a.input.clone().map(Some));
            set(&mut c.out, a.out.clone().map(Some));
            set(&mut c.garment, a.garment.clone().map(Some));
            set(&mut c.catalog, a.catalog.clone().map(Some));
            set(&mut c.format, a.format);
            set(&mut c.fps, a.fps);
            a.backends.apply(&mut c.perception);
            Resolved::InferVideo(c)
        }
        Command::Serve(a) => {
            let mut c: ServeConfig = base_config(file)?;
            set(&mut c.catalog, a.catalog.clone().map(Some));
            set(&mut c.port, a.port);
            set(&mut c.host, a.host.clone());
            a.backends.apply(&mut c.perception);
            Resolved::Serve(c)
        }
    })
}

/// Parse, resolve and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match resolve(&cli).and_then(|r| {
        let text = serde_json::to_string_pretty(&r).map_err(|e| Error::json("resolved config", e))?;
        if cli.print_config {
            println!("{text}");
            return Ok(());
        }
        eprintln!("{text}");
        execute(r)
    }) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match e.exit_code() {
                2 => "config",
                3 => "backend",
                _ => "input",
            };
            eprintln!("{}", serde_json::json!({"error": kind, "message": e.to_string(), "exit_code": e.exit_code()}));
            e.exit_code()
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v).map_err(|e| Error::json("output", e))?);
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(r: Resolved) -> Result<()> {
    match r {
        Resolved::CaptureGuide(c) => capture_guide(&c),
        Resolved::BuildDataset(c) => build_dataset(&c),
        Resolved::ValidateDataset(c) => validate_dataset(&c),
        Resolved::Train(c) => train(&c),
        Resolved::Evaluate(c) => evaluate(&c),
        Resolved::InferVideo(c) => infer_video(&c),
        Resolved::Serve(c) => serve(&c),
    }
}

fn capture_guide(c: &CaptureGuideConfig) -> Result<()> {
    let out = require(&c.out, "out")?;
    c.protocol.validate().map_err(|e| Error::config(e.to_string()))?;
    let script = dataset::capture_session_guide(&c.protocol);
    create_dir(&out)?;
    for pose in &c.protocol.poses {
        let path = out.join(&pose.guide_image);
        if !path.starts_with(&out) || pose.guide_image.contains("..") {
            return Err(Error::config(format!("guide image {:?} escapes the output directory", pose.guide_image)));
        }
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        let img = dataset::render_guide_image(pose, c.image_size[0], c.image_size[1])?;
        imaging::save_png(&img, &path)?;
    }
    write_json(&out.join("guide.json"), &script)?;
    print_json(&script)
}

fn build_dataset(c: &BuildDatasetConfig) -> Result<()> {
    let video = require(&c.video, "video")?;
    let garment_id = require(&c.garment_id, "garment-id")?;
    let out = require(&c.out, "out")?;
    c.dataset.validate()?;
    let mut source = video::open_source(&video, c.fps)?;
    let backends = Backends::from_config(&c.perception)?;
    create_dir(&out)?;
    let m = dataset::build_dataset(source.as_mut(), &backends, &garment_id, &c.dataset, &out)?;
    print_json(&serde_json::json!({
        "garment_id": m.garment_id,
        "records": m.records.len(),
        "skipped": m.skipped.len(),
        "content_hash": m.content_hash,
    }))
}

fn validate_dataset(c: &ValidateDatasetConfig) -> Result<()> {
    let dir = require(&c.dataset, "dataset")?;
    let report = dataset::validate_dataset(&dir)?;
    print_json(&report)?;
    if report.failed > 0 || !report.hash_matches {
        return Err(Error::invalid(format!(
            "{} of {} records failed; content hash {}",
            report.failed,
            report.failed + report.passed,
            if report.hash_matches { "matches" } else { "does not match" }
        )));
    }
    Ok(())
}

fn train(c: &TrainCliConfig) -> Result<()> {
    let ds = require(&c.dataset, "dataset")?;
    let out = require(&c.out, "out")?;
    c.train.validate()?;
    create_dir(&out)?;
    let summary = trainer::train(&ds, &c.train, &out, c.resume.as_deref())?;
    print_json(&summary)
}

fn load_video(path: &Path, resize: Option<[usize; 2]>) -> Result<Vec<Image>> {
    let mut src = video::open_source(path, video::DEFAULT_FPS)?;
    let frames = video::read_all(src.as_mut())?;
    Ok(match resize {
        Some([h, w]) => frames.iter().map(|f| imaging::resize(f, h, w)).collect(),
        None => frames,
    })
}

fn evaluate(c: &EvaluateConfig) -> Result<()> {
    let pred = require(&c.pred, "pred")?;
    let gt = require(&c.gt, "gt")?;
    if c.metrics.is_empty() {
        return Err(Error::config("no metrics requested"));
    }
    for m in &c.metrics {
        match m.as_str() {
            "ssim" | "l1" => {}
            "lpips" | "vfid" => {
                return Err(Error::config(format!("metric {m} needs an external feature backend, none is configured")))
            }
            other => return Err(Error::config(format!("unknown metric {other:?} (expected ssim, l1)"))),
        }
    }
    let a = load_video(&pred, c.resize)?;
    let b = load_video(&gt, c.resize)?;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("frame counts differ or are zero: {} vs {}", a.len(), b.len())));
    }
    let mut reports = Vec::new();
    for m in &c.metrics {
        let per_frame: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(p, g)| match m.as_str() {
                "ssim" => metrics::ssim(p, g),
                _ => {
                    let (h, w) = g.dims();
                    metrics::masked_l1(p, g, &SoftMask::filled(h, w, 1.0))
                }
            })
            .collect::<Result<_>>()?;
        let params = if m == "ssim" {
            metrics::ssim_params()
        } else {
            serde_json::json!({"mask": "full"})
        };
        reports.push(MetricReport::new(m, params, per_frame));
    }
    let out = serde_json::json!({"frames": a.len(), "metrics": reports});
    if let Some(p) = &c.report {
        write_json(p, &out)?;
    }
    print_json(&out)
}

fn open_catalog(catalog: Option<&Path>, garment: Option<&str>) -> Result<Catalog> {
    match (catalog, garment) {
        (None, Some(g)) if Path::new(g).is_file() => Catalog::from_checkpoint(Path::new(g)),
        (Some(dir), _) => Catalog::load(dir),
        (None, _) => Err(Error::config("missing required setting --catalog")),
    }
}

fn infer_video(c: &InferVideoConfig) -> Result<()> {
    let input = require(&c.input, "in")?;
    let out = require(&c.out, "out")?;
    let garment = require(&c.garment, "garment")?;
    c.engine.validate()?;
    let catalog = open_catalog(c.catalog.as_deref(), Some(&garment))?;
    let mut source = video::open_source(&input, c.fps)?;
    let backends = Backends::from_config(&c.perception)?;
    backends.probe(false)?;
    let engine = Engine::new(catalog, backends, c.engine.clone())?;
    if !Path::new(&garment).is_file() {
        engine.select(&garment).map_err(|e| Error::config(e.to_string()))?;
    }
    create_dir(&out)?;
    let fps = source.fps();
    let video_path = match c.format {
        OutputFormat::Y4m => out.join("output.y4m"),
        OutputFormat::Png => out.join("frames"),
    };
    let summary = engine::infer_video(&engine, source.as_mut(), |h, w| video::create_sink(&video_path, fps, h, w))?;
    write_json(&out.join(LATENCY_FILE), &summary)?;
    print_json(&serde_json::json!({
        "garment_id": summary.garment_id,
        "frames": summary.frames,
        "passthrough": summary.passthrough,
        "fps": summary.fps,
        "mean_latency": summary.mean_latency,
        "output": video_path,
    }))
}

fn serve(c: &ServeConfig) -> Result<()> {
    let catalog = open_catalog(c.catalog.as_deref(), None)?;
    let backends = Backends::from_config(&c.perception)?;
    backends.probe(false)?;
    let engine = Engine::new(catalog, backends, c.engine.clone())?;
    let addr: SocketAddr = format!("{}:{}", c.host, c.port)
        .parse()
        .map_err(|e| Error::config(format!("bad listen address {}:{}: {e}", c.host, c.port)))?;
    crate::server::serve(Arc::new(Service::new(engine)), addr)
}
