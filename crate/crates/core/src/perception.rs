//! Pluggable perception backends (3D pose, DensePose, garment parsing).
//!
//! Two families ship here:
//!
//! * deterministic stubs that analyse the frame's foreground and fit the
//!   procedural body to it, so the whole pipeline runs without model weights;
//! * subprocess adapters for external models. An adapter executable is invoked
//!   as `<exe> <frame.png> <out_dir>` and writes `result.json` into `out_dir`:
//!   - pose: `{"found": bool, "betas": [10], "thetas": [72], "camera": [s, tx, ty], "confidence": c}`
//!   - densepose: `{"found": bool}` plus `i.png` (raw part index per pixel),
//!     `u.png` and `v.png` (8-bit normalized surface coordinates)
//!   - parse: `{"found": bool}` plus `mask.png`
//!
//! A backend returning `Ok(None)` means "no person"; `Err(Error::Backend)` means
//! the backend itself failed.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{self, SmplParams, NUM_BETAS, NUM_POSE_PARAMS};
use crate::error::{Error, Result};
use crate::imaging::{self, BoundingBox, Image, SoftMask};
use crate::raster::{self, WeakPerspective, NO_FACE};

/// A decoded frame with its position in the stream.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u64,
    pub image: Image,
}

impl Frame {
    pub fn new(id: u64, image: Image) -> Self {
        Self { id, image }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyPoseEstimate {
    pub betas: Vec<f64>,
    pub thetas: Vec<f64>,
    pub camera: WeakPerspective,
    pub confidence: f64,
}

impl BodyPoseEstimate {
    pub fn smpl(&self) -> SmplParams {
        SmplParams {
            betas: self.betas.clone(),
            thetas: self.thetas.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smpl().validate()?;
        self.camera.validate()?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("confidence {} outside [0,1]", self.confidence)));
        }
        Ok(())
    }
}

/// Per-pixel DensePose result: part index in `0..=24` (0 = background) and
/// surface coordinates in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePoseMap {
    pub height: usize,
    pub width: usize,
    pub part: Vec<u8>,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl DensePoseMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            part: vec![0; height * width],
            u: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn set(&mut self, y: usize, x: usize, part: u8, u: f32, v: f32) {
        let i = y * self.width + x;
        self.part[i] = part;
        self.u[i] = if part == 0 { 0.0 } else { u };
        self.v[i] = if part == 0 { 0.0 } else { v };
    }

    #[inline]
    pub fn part_at(&self, y: usize, x: usize) -> u8 {
        self.part[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.part.len() != n || self.u.len() != n || self.v.len() != n {
            return Err(Error::invalid("DensePose planes do not match dimensions"));
        }
        for i in 0..n {
            let p = self.part[i];
            if p > body::dp::NUM_PARTS {
                return Err(Error::invalid(format!("DensePose part index {p} out of range")));
            }
            if p == 0 && (self.u[i] != 0.0 || self.v[i] != 0.0) {
                return Err(Error::invalid("DensePose uv must be zero on background"));
            }
            if !(0.0..=1.0).contains(&self.u[i]) || !(0.0..=1.0).contains(&self.v[i]) {
                return Err(Error::invalid("DensePose uv outside [0,1]"));
            }
        }
        Ok(())
    }

    pub fn body_pixels(&self) -> usize {
        self.part.iter().filter(|p| **p != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseResult {
    pub garment_mask: SoftMask,
    pub garment_image: Image,
}

impl ParseResult {
    /// Binarize `mask` at 0.5 and cut the garment out of `frame`.
    pub fn from_mask(frame: &Image, mask: &SoftMask) -> Result<Self> {
        let mask = mask.binarized(0.5);
        let garment_image = imaging::composite(&Image::zeros(3, frame.height(), frame.width()), frame, &mask)?;
        Ok(Self {
            garment_mask: mask,
            garment_image,
        })
    }
}

pub trait PoseBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Capability probe; the pipeline refuses to start when this fails.
    fn probe(&self) -> Result<()>;
    fn estimate_pose(&self, frame: &Frame) -> Result<Option<BodyPoseEstimate>>;
}

pub trait DensePoseBackend: Send + Sync {
    fn name(&self) -> &str;
    fn probe(&self) -> Result<()>;
    fn estimate_densepose(&self, frame: &Frame) -> Result<Option<DensePoseMap>>;
}

pub trait ParseBackend: Send + Sync {
    fn name(&self) -> &str;
    fn probe(&self) -> Result<()>;
    fn parse_garment(&self, frame: &Frame) -> Result<ParseResult>;
}

/// The three backends a pipeline needs.
#[derive(Clone)]
pub struct Backends {
    pub pose: Arc<dyn PoseBackend>,
    pub densepose: Arc<dyn DensePoseBackend>,
    pub parse: Arc<dyn ParseBackend>,
}

impl Backends {
    pub fn stub(seed: u64) -> Self {
        Self {
            pose: Arc::new(StubPose::new(seed)),
            densepose: Arc::new(StubDensePose::new(seed)),
            parse: Arc::new(StubParse::default()),
        }
    }

    /// Probe everything; inference only needs pose and DensePose.
    pub fn probe(&self, need_parse: bool) -> Result<()> {
        self.pose.probe()?;
        self.densepose.probe()?;
        if need_parse {
            self.parse.probe()?;
        }
        Ok(())
    }

    pub fn from_config(cfg: &PerceptionConfig) -> Result<Self> {
        let dir = || -> Result<PathBuf> {
            cfg.backend_dir
                .clone()
                .or_else(|| std::env::var_os(BACKEND_DIR_ENV).map(PathBuf::from))
                .ok_or_else(|| Error::config(format!("external backends need {BACKEND_DIR_ENV} or backend_dir")))
        };
        let pose: Arc<dyn PoseBackend> = match cfg.pose {
            BackendKind::Stub => Arc::new(StubPose::new(cfg.stub_seed)),
            BackendKind::External => Arc::new(ExternalPose::new(dir()?.join("pose"))),
        };
        let densepose: Arc<dyn DensePoseBackend> = match cfg.densepose {
            BackendKind::Stub => Arc::new(StubDensePose::new(cfg.stub_seed)),
            BackendKind::External => Arc::new(ExternalDensePose::new(dir()?.join("densepose"))),
        };
        let parse: Arc<dyn ParseBackend> = match cfg.parse {
            BackendKind::Stub => Arc::new(StubParse::default()),
            BackendKind::External => Arc::new(ExternalParse::new(dir()?.join("parse"))),
        };
        Ok(Self { pose, densepose, parse })
    }
}

pub const BACKEND_DIR_ENV: &str = "TRYON_BACKEND_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stub,
    External,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(BackendKind::Stub),
            "external" => Ok(BackendKind::External),
            other => Err(Error::config(format!("unknown backend {other:?} (expected stub or external)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub pose: BackendKind,
    pub densepose: BackendKind,
    pub parse: BackendKind,
    pub stub_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_dir: Option<PathBuf>,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            pose: BackendKind::Stub,
            densepose: BackendKind::Stub,
            parse: BackendKind::Stub,
            stub_seed: 7,
            backend_dir: None,
        }
    }
}

// --- stubs -------------------------------------------------------------------

/// Pixels brighter than this in any channel count as foreground for the stubs.
pub const FOREGROUND_THRESHOLD: f32 = 0.04;
const MIN_PERSON_PIXELS: usize = 16;
const MERGE_GAP: usize = 3;

/// Canonical body for a stub seed: a relaxed A-pose with small seeded deviations.
pub fn stub_canonical_params(seed: u64) -> SmplParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b0d1);
    let mut p = SmplParams::neutral();
    for b in p.betas.iter_mut().take(4) {
        *b = rng.gen_range(-1.0..=1.0);
    }
    p.set_joint_rotation(16, [0.0, 0.0, -0.9]);
    p.set_joint_rotation(17, [0.0, 0.0, 0.9]);
    p.set_joint_rotation(18, [0.0, rng.gen_range(-0.15..=0.0), 0.0]);
    p.set_joint_rotation(19, [0.0, rng.gen_range(0.0..=0.15), 0.0]);
    for j in [3usize, 6, 9] {
        let aa = [
            rng.gen_range(-0.03..=0.03),
            rng.gen_range(-0.05..=0.05),
            rng.gen_range(-0.03..=0.03),
        ];
        p.set_joint_rotation(j, aa);
    }
    debug_assert_eq!(p.betas.len(), NUM_BETAS);
    debug_assert_eq!(p.thetas.len(), NUM_POSE_PARAMS);
    p
}

/// Projected extents `(xmin, xmax, ymin, ymax)` of posed vertices, in meters.
fn extents(vertices: &[[f64; 3]]) -> (f64, f64, f64, f64) {
    vertices.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), v| (a.min(v[0]), b.max(v[0]), c.min(v[1]), d.max(v[1])),
    )
}

/// Camera that maps the body's projected extents onto a pixel box.
pub fn fit_camera(vertices: &[[f64; 3]], bbox: &BoundingBox) -> WeakPerspective {
    let (xmin, xmax, ymin, ymax) = extents(vertices);
    let scale = bbox.height() as f64 / (ymax - ymin);
    let cx = (bbox.x0 + bbox.x1 + 1) as f64 / 2.0;
    let cy = (bbox.y0 + bbox.y1 + 1) as f64 / 2.0;
    WeakPerspective::new(scale, cx - scale * (xmin + xmax) / 2.0, cy + scale * (ymin + ymax) / 2.0)
}

/// Camera placing the body so that its projection is `height_px` tall and centered at `(cx, cy)`.
pub fn camera_for(vertices: &[[f64; 3]], height_px: f64, cx: f64, cy: f64) -> WeakPerspective {
    let (xmin, xmax, ymin, ymax) = extents(vertices);
    let scale = height_px / (ymax - ymin);
    WeakPerspective::new(scale, cx - scale * (xmin + xmax) / 2.0, cy + scale * (ymin + ymax) / 2.0)
}

/// Foreground blobs (8-connected, nearby blobs merged), as bounding boxes with pixel counts.
pub fn person_blobs(img: &Image) -> Vec<(BoundingBox, usize)> {
    let (h, w) = img.dims();
    let mut label = vec![u32::MAX; h * w];
    let mut blobs: Vec<(BoundingBox, usize)> = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if label[y * w + x] != u32::MAX || !img.is_foreground(y, x, FOREGROUND_THRESHOLD) {
                continue;
            }
            let id = blobs.len() as u32;
            let mut bbox = BoundingBox::singleton(x, y);
            let mut count = 0;
            label[y * w + x] = id;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                count += 1;
                bbox.include(cx, cy);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = cy as i64 + dy;
                        let nx = cx as i64 + dx;
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if label[ny * w + nx] == u32::MAX && img.is_foreground(ny, nx, FOREGROUND_THRESHOLD) {
                            label[ny * w + nx] = id;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            blobs.push((bbox, count));
        }
    }
    // merge blobs whose boxes come within MERGE_GAP pixels of each other
    let near = |a: &BoundingBox, b: &BoundingBox| {
        a.x0 <= b.x1 + MERGE_GAP && b.x0 <= a.x1 + MERGE_GAP && a.y0 <= b.y1 + MERGE_GAP && b.y0 <= a.y1 + MERGE_GAP
    };
    loop {
        let mut merged = false;
        'outer: for i in 0..blobs.len() {
            for j in i + 1..blobs.len() {
                if near(&blobs[i].0, &blobs[j].0) {
                    let (b, c) = blobs.remove(j);
                    blobs[i].0.include(b.x0, b.y0);
                    blobs[i].0.include(b.x1, b.y1);
                    blobs[i].1 += c;
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    blobs.retain(|(_, c)| *c >= MIN_PERSON_PIXELS);
    blobs
}

/// Largest person by bounding-box area; ties resolve to the first found.
pub fn largest_person(img: &Image) -> Option<BoundingBox> {
    person_blobs(img)
        .into_iter()
        .fold(None, |best: Option<BoundingBox>, (b, _)| match best {
            Some(cur) if cur.area() >= b.area() => Some(cur),
            _ => Some(b),
        })
}

#[derive(Debug, Clone)]
struct StubBody {
    params: SmplParams,
    vertices: Vec<[f64; 3]>,
}

impl StubBody {
    fn new(seed: u64) -> Self {
        let params = stub_canonical_params(seed);
        let vertices = body::template()
            .posed_vertices(&params)
            .expect("canonical stub parameters are valid");
        Self { params, vertices }
    }

    fn fit(&self, frame: &Image) -> Result<Option<(BodyPoseEstimate, BoundingBox)>> {
        if frame.channels() != 3 {
            return Err(Error::invalid(format!("expected a 3-channel frame, got {}", frame.channels())));
        }
        let Some(bbox) = largest_person(frame) else {
            return Ok(None);
        };
        let camera = fit_camera(&self.vertices, &bbox);
        Ok(Some((
            BodyPoseEstimate {
                betas: self.params.betas.clone(),
                thetas: self.params.thetas.clone(),
                camera,
                confidence: 1.0,
            },
            bbox,
        )))
    }
}

/// Pose stub: fits the seed's canonical body to the largest foreground blob.
#[derive(Debug, Clone)]
pub struct StubPose {
    seed: u64,
    body: StubBody,
}

impl StubPose {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            body: StubBody::new(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl PoseBackend for StubPose {
    fn name(&self) -> &str {
        "stub"
    }

    fn probe(&self) -> Result<()> {
        Ok(())
    }

    fn estimate_pose(&self, frame: &Frame) -> Result<Option<BodyPoseEstimate>> {
        Ok(self.body.fit(&frame.image)?.map(|(est, _)| est))
    }
}

/// DensePose stub: rasterizes the fitted canonical body's part labels and
/// surface coordinates.
#[derive(Debug, Clone)]
pub struct StubDensePose {
    body: StubBody,
}

impl StubDensePose {
    pub fn new(seed: u64) -> Self {
        Self {
            body: StubBody::new(seed),
        }
    }
}

/// Rasterize DensePose labels for posed template vertices.
pub fn render_densepose(
    vertices: &[[f64; 3]],
    camera: &WeakPerspective,
    height: usize,
    width: usize,
) -> Result<DensePoseMap> {
    let t = body::template();
    let vis = raster::rasterize(vertices, &t.faces, camera, height, width)?;
    let mut map = DensePoseMap::empty(height, width);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let f = vis.face[i];
            if f == NO_FACE {
                continue;
            }
            let face = t.faces[f as usize];
            let w = vis.bary[i];
            let dominant = (0..3).fold(0, |best, k| if w[k] > w[best] { k } else { best });
            let part = t.dp_part[face[dominant] as usize];
            let mut uv = [0.0f32; 2];
            for k in 0..3 {
                let tuv = t.dp_uv[face[k] as usize];
                uv[0] += w[k] * tuv[0];
                uv[1] += w[k] * tuv[1];
            }
            map.set(y, x, part, uv[0].clamp(0.0, 1.0), uv[1].clamp(0.0, 1.0));
        }
    }
    Ok(map)
}

impl DensePoseBackend for StubDensePose {
    fn name(&self) -> &str {
        "stub"
    }

    fn probe(&self) -> Result<()> {
        Ok(())
    }

    fn estimate_densepose(&self, frame: &Frame) -> Result<Option<DensePoseMap>> {
        let Some((est, _)) = self.body.fit(&frame.image)? else {
            return Ok(None);
        };
        let map = render_densepose(&self.body.vertices, &est.camera, frame.image.height(), frame.image.width())?;
        if map.body_pixels() == 0 {
            return Ok(None);
        }
        Ok(Some(map))
    }
}

/// Garment-parsing stub: pixels within `tolerance` (per channel) of any key color
/// are garment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubParse {
    pub key_colors: Vec<[f32; 3]>,
    pub tolerance: f32,
}

/// Shirt colors used by the synthetic capture renderer.
pub const SHIRT_COLOR: [f32; 3] = [0.78, 0.14, 0.16];
pub const SHIRT_STRIPE_COLOR: [f32; 3] = [0.55, 0.08, 0.12];

impl Default for StubParse {
    fn default() -> Self {
        Self {
            key_colors: vec![SHIRT_COLOR, SHIRT_STRIPE_COLOR],
            tolerance: 0.08,
        }
    }
}

impl StubParse {
    pub fn mask(&self, frame: &Image) -> SoftMask {
        SoftMask::from_fn(frame.height(), frame.width(), |y, x| {
            let hit = self.key_colors.iter().any(|k| (0..3).all(|c| (frame.get(c, y, x) - k[c]).abs() <= self.tolerance));
            if hit {
                1.0
            } else {
                0.0
            }
        })
    }
}

impl ParseBackend for StubParse {
    fn name(&self) -> &str {
        "stub"
    }

    fn probe(&self) -> Result<()> {
        Ok(())
    }

    fn parse_garment(&self, frame: &Frame) -> Result<ParseResult> {
        if frame.image.channels() != 3 {
            return Err(Error::invalid("garment parsing expects a 3-channel frame"));
        }
        ParseResult::from_mask(&frame.image, &self.mask(&frame.image))
    }
}

/// Wraps a backend and fails with a backend error on the listed frame ids.
#[derive(Debug, Clone)]
pub struct FailOnFrames<B> {
    pub inner: B,
    pub frames: HashSet<u64>,
}

impl<B> FailOnFrames<B> {
    pub fn new(inner: B, frames: impl IntoIterator<Item = u64>) -> Self {
        Self {
            inner,
            frames: frames.into_iter().collect(),
        }
    }

    fn check(&self, frame: &Frame) -> Result<()> {
        if self.frames.contains(&frame.id) {
            Err(Error::backend(format!("injected failure on frame {}", frame.id)))
        } else {
            Ok(())
        }
    }
}

impl<B: PoseBackend> PoseBackend for FailOnFrames<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn probe(&self) -> Result<()> {
        self.inner.probe()
    }
    fn estimate_pose(&self, frame: &Frame) -> Result<Option<BodyPoseEstimate>> {
        self.check(frame)?;
        self.inner.estimate_pose(frame)
    }
}

impl<B: DensePoseBackend> DensePoseBackend for FailOnFrames<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn probe(&self) -> Result<()> {
        self.inner.probe()
    }
    fn estimate_densepose(&self, frame: &Frame) -> Result<Option<DensePoseMap>> {
        self.check(frame)?;
        self.inner.estimate_densepose(frame)
    }
}

impl<B: ParseBackend> ParseBackend for FailOnFrames<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn probe(&self) -> Result<()> {
        self.inner.probe()
    }
    fn parse_garment(&self, frame: &Frame) -> Result<ParseResult> {
        self.check(frame)?;
        self.inner.parse_garment(frame)
    }
}

// --- external adapters -------------------------------------------------------

fn probe_executable(path: &Path) -> Result<()> {
    use std::os::unix::fs::PermissionsExt;
    let meta = std::fs::metadata(path).map_err(|e| Error::backend(format!("{}: {e}", path.display())))?;
    if !meta.is_file() || meta.permissions().mode() & 0o111 == 0 {
        return Err(Error::backend(format!("{} is not an executable file", path.display())));
    }
    Ok(())
}

/// Run an adapter on one frame; returns the output directory and parsed result.json.
fn run_adapter(exe: &Path, frame: &Frame) -> Result<(tempfile::TempDir, serde_json::Value)> {
    let dir = tempfile::tempdir().map_err(|e| Error::backend(format!("temp dir: {e}")))?;
    let input = dir.path().join("frame.png");
    imaging::save_png(&frame.image, &input)?;
    let out_dir = dir.path().join("out");
    std::fs::create_dir(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let status = Command::new(exe)
        .arg(&input)
        .arg(&out_dir)
        .status()
        .map_err(|e| Error::backend(format!("{}: {e}", exe.display())))?;
    if !status.success() {
        return Err(Error::backend(format!("{} exited with {status}", exe.display())));
    }
    let result_path = out_dir.join("result.json");
    let text = std::fs::read_to_string(&result_path)
        .map_err(|e| Error::backend(format!("{}: {e}", result_path.display())))?;
    let value = serde_json::from_str(&text).map_err(|e| Error::backend(format!("{}: {e}", result_path.display())))?;
    Ok((dir, value))
}

fn found(v: &serde_json::Value) -> bool {
    v.get("found").and_then(|f| f.as_bool()).unwrap_or(false)
}

#[derive(Debug, Clone)]
pub struct ExternalPose {
    exe: PathBuf,
}

impl ExternalPose {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self { exe: exe.into() }
    }
}

#[derive(Deserialize)]
struct PoseJson {
    betas: Vec<f64>,
    thetas: Vec<f64>,
    camera: [f64; 3],
    #[serde(default = "one")]
    confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl PoseBackend for ExternalPose {
    fn name(&self) -> &str {
        "external"
    }

    fn probe(&self) -> Result<()> {
        probe_executable(&self.exe)
    }

    fn estimate_pose(&self, frame: &Frame) -> Result<Option<BodyPoseEstimate>> {
        let (_dir, v) = run_adapter(&self.exe, frame)?;
        if !found(&v) {
            return Ok(None);
        }
        let p: PoseJson = serde_json::from_value(v).map_err(|e| Error::backend(format!("pose result: {e}")))?;
        let est = BodyPoseEstimate {
            betas: p.betas,
            thetas: p.thetas,
            camera: WeakPerspective::new(p.camera[0], p.camera[1], p.camera[2]),
            confidence: p.confidence.clamp(0.0, 1.0),
        };
        est.validate().map_err(|e| Error::backend(format!("pose result: {e}")))?;
        Ok(Some(est))
    }
}

#[derive(Debug, Clone)]
pub struct ExternalDensePose {
    exe: PathBuf,
}

impl ExternalDensePose {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self { exe: exe.into() }
    }
}

impl DensePoseBackend for ExternalDensePose {
    fn name(&self) -> &str {
        "external"
    }

    fn probe(&self) -> Result<()> {
        probe_executable(&self.exe)
    }

    fn estimate_densepose(&self, frame: &Frame) -> Result<Option<DensePoseMap>> {
        let (dir, v) = run_adapter(&self.exe, frame)?;
        if !found(&v) {
            return Ok(None);
        }
        let out = dir.path().join("out");
        let load = |name: &str| -> Result<Image> {
            let img = imaging::load_png(&out.join(name)).map_err(|e| Error::backend(e.to_string()))?;
            if img.dims() != frame.image.dims() {
                return Err(Error::backend(format!("{name} has wrong dimensions")));
            }
            Ok(if img.channels() == 1 { img } else { img.luma()? })
        };
        let (i, u, v) = (load("i.png")?, load("u.png")?, load("v.png")?);
        let mut map = DensePoseMap::empty(frame.image.height(), frame.image.width());
        for y in 0..map.height {
            for x in 0..map.width {
                let part = imaging::quantize(i.get(0, y, x));
                if part > body::dp::NUM_PARTS {
                    return Err(Error::backend(format!("part index {part} out of range")));
                }
                map.set(y, x, part, u.get(0, y, x), v.get(0, y, x));
            }
        }
        if map.body_pixels() == 0 {
            return Ok(None);
        }
        Ok(Some(map))
    }
}

#[derive(Debug, Clone)]
pub struct ExternalParse {
    exe: PathBuf,
}

impl ExternalParse {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self { exe: exe.into() }
    }
}

impl ParseBackend for ExternalParse {
    fn name(&self) -> &str {
        "external"
    }

    fn probe(&self) -> Result<()> {
        probe_executable(&self.exe)
    }

    fn parse_garment(&self, frame: &Frame) -> Result<ParseResult> {
        let (dir, v) = run_adapter(&self.exe, frame)?;
        if !found(&v) {
            let (h, w) = frame.image.dims();
            return ParseResult::from_mask(&frame.image, &SoftMask::zeros(h, w));
        }
        let mask = imaging::load_mask_png(&dir.path().join("out").join("mask.png"))
            .map_err(|e| Error::backend(e.to_string()))?;
        if mask.dims() != frame.image.dims() {
            return Err(Error::backend("parse mask has wrong dimensions"));
        }
        ParseResult::from_mask(&frame.image, &mask)
    }
}
