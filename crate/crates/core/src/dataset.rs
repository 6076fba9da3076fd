//! Per-garment dataset: capture guidance, frame-by-frame processing of a
//! capture video into aligned ROI crops, and on-disk manifest handling.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.json
//! frames/000000_vm.png  000000_sdp.png  000000_dp.png  000000_garment.png  000000_mask.png
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::SmplParams;
use crate::densepose_prep::{self, SimplificationSet};
use crate::error::{Error, Result};
use crate::imaging::{self, BoundingBox, Image, Interp, RoiTransform, SoftMask};
use crate::measurement_garment::{self, GridTexture};
use crate::perception::{Backends, Frame};
use crate::video::FrameSource;

pub const PIPELINE_VERSION: &str = "tryon-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";

// --- capture protocol --------------------------------------------------------

/// Arm configuration in degrees. Abduction 0 = hanging down, 90 = horizontal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    pub abduction_deg: f64,
    pub forward_deg: f64,
    pub elbow_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDescriptor {
    pub name: String,
    pub guide_image: String,
    pub duration_s: f64,
    pub left_arm: ArmPose,
    pub right_arm: ArmPose,
}

impl PoseDescriptor {
    pub fn is_symmetric(&self) -> bool {
        self.left_arm == self.right_arm
    }

    /// Body parameters that illustrate the pose (used for guide images).
    pub fn body_params(&self) -> SmplParams {
        let mut p = SmplParams::neutral();
        let arm = |a: &ArmPose, sign: f64| {
            let down = (90.0 - a.abduction_deg).to_radians();
            [0.0, -sign * a.forward_deg.to_radians(), -sign * down]
        };
        p.set_joint_rotation(16, arm(&self.left_arm, 1.0));
        p.set_joint_rotation(17, arm(&self.right_arm, -1.0));
        p.set_joint_rotation(18, [0.0, -self.left_arm.elbow_deg.to_radians(), 0.0]);
        p.set_joint_rotation(19, [0.0, self.right_arm.elbow_deg.to_radians(), 0.0]);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureProtocol {
    pub poses: Vec<PoseDescriptor>,
    /// Turn performed in place during every pose.
    pub rotation_deg: f64,
    pub resolution: [usize; 2],
    pub fps: f64,
}

pub const DEFAULT_SESSION_SECONDS: f64 = 120.0;

impl Default for CaptureProtocol {
    fn default() -> Self {
        // (name, abduction, forward, elbow)
        let table: [(&str, f64, f64, f64); 14] = [
            ("arms_down", 10.0, 0.0, 0.0),
            ("low_v", 25.0, 0.0, 0.0),
            ("a_pose", 45.0, 0.0, 0.0),
            ("t_pose", 90.0, 0.0, 0.0),
            ("wide_v", 120.0, 0.0, 0.0),
            ("arms_up", 160.0, 0.0, 0.0),
            ("arms_forward", 10.0, 90.0, 0.0),
            ("arms_half_forward", 30.0, 45.0, 0.0),
            ("hands_on_hips", 45.0, 0.0, 100.0),
            ("goalpost", 90.0, 0.0, 90.0),
            ("hands_on_chest", 20.0, 60.0, 120.0),
            ("elbows_out_front", 70.0, 30.0, 110.0),
            ("hands_behind_head", 150.0, 0.0, 130.0),
            ("arms_back", 15.0, -30.0, 30.0),
        ];
        let per_pose = DEFAULT_SESSION_SECONDS / table.len() as f64;
        let poses = table
            .iter()
            .enumerate()
            .map(|(i, &(name, abduction_deg, forward_deg, elbow_deg))| {
                let arm = ArmPose {
                    abduction_deg,
                    forward_deg,
                    elbow_deg,
                };
                PoseDescriptor {
                    name: name.to_string(),
                    guide_image: format!("poses/{:02}_{name}.png", i + 1),
                    duration_s: per_pose,
                    left_arm: arm,
                    right_arm: arm,
                }
            })
            .collect();
        Self {
            poses,
            rotation_deg: 360.0,
            resolution: [3840, 2160],
            fps: 30.0,
        }
    }
}

impl CaptureProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() != 14 {
            return Err(Error::invalid(format!("protocol needs 14 poses, has {}", self.poses.len())));
        }
        if let Some(p) = self.poses.iter().find(|p| !p.is_symmetric()) {
            return Err(Error::invalid(format!("pose {} is not symmetric", p.name)));
        }
        if self.poses.iter().any(|p| !(p.duration_s > 0.0)) {
            return Err(Error::invalid("pose durations must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideEntry {
    pub index: usize,
    pub name: String,
    pub guide_image: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub rotation_deg: f64,
}

/// Timed guidance script consumed by the capture screen of the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuideScript {
    pub entries: Vec<GuideEntry>,
    pub total_s: f64,
}

pub fn capture_session_guide(protocol: &CaptureProtocol) -> GuideScript {
    let mut t = 0.0;
    let entries = protocol
        .poses
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let e = GuideEntry {
                index,
                name: p.name.clone(),
                guide_image: p.guide_image.clone(),
                start_s: t,
                duration_s: p.duration_s,
                rotation_deg: protocol.rotation_deg,
            };
            t += p.duration_s;
            e
        })
        .collect();
    GuideScript { entries, total_s: t }
}

/// Render the illustration for one pose (front view, person centered).
pub fn render_guide_image(pose: &PoseDescriptor, height: usize, width: usize) -> Result<Image> {
    let verts = crate::body::template().posed_vertices(&pose.body_params())?;
    let cam = crate::perception::camera_for(&verts, height as f64 * 0.9, width as f64 / 2.0, height as f64 / 2.0);
    let mut img = Image::zeros(3, height, width);
    crate::synthetic::render_person(&mut img, &verts, &cam, &crate::synthetic::PersonStyle::default())?;
    Ok(img)
}

// --- dataset -----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub roi_size: usize,
    /// Frames are downscaled (never upscaled) so their short side is at most this.
    pub working_short_side: usize,
    pub roi_padding: f64,
    pub simplification_set: SimplificationSet,
    pub texture: GridTexture,
    /// Frames processed in parallel per batch.
    pub chunk_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            roi_size: 512,
            working_short_side: 1024,
            roi_padding: 0.15,
            simplification_set: SimplificationSet::default(),
            texture: GridTexture::default(),
            chunk_size: 16,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.roi_size == 0 || self.working_short_side == 0 || self.chunk_size == 0 {
            return Err(Error::config("roi_size, working_short_side and chunk_size must be positive"));
        }
        if !(self.roi_padding >= 0.0) || !self.roi_padding.is_finite() {
            return Err(Error::config(format!("bad roi_padding {}", self.roi_padding)));
        }
        self.texture.validate().map_err(|e| Error::config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub frame_id: u64,
    pub vm_path: String,
    pub sdp_path: String,
    /// Unsimplified DensePose crop, used by the VMDP ablation.
    pub dp_path: String,
    pub garment_path: String,
    pub mask_path: String,
    /// ROI in working-resolution frame coordinates.
    pub roi: RoiTransform,
    pub bbox: BoundingBox,
    pub pose_confidence: f64,
    /// The person's upper-body box touches the frame border.
    pub partial: bool,
}

impl DatasetRecord {
    pub fn paths(&self) -> [&str; 5] {
        [&self.vm_path, &self.sdp_path, &self.dp_path, &self.garment_path, &self.mask_path]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    pub width: usize,
    pub height: usize,
    pub working_width: usize,
    pub working_height: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub garment_id: String,
    pub pipeline_version: String,
    pub capture: CaptureMetadata,
    pub config: DatasetConfig,
    pub simplification_set: SimplificationSet,
    pub total_frames: u64,
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<SkippedFrame>,
    /// sha256 over the manifest (with this field empty) and every record file.
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Recompute the content hash from the manifest fields and the files under `dir`.
    pub fn compute_hash(&self, dir: &Path) -> Result<String> {
        let mut blank = self.clone();
        blank.content_hash.clear();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&blank).map_err(|e| Error::json("manifest", e))?);
        for r in &self.records {
            for p in r.paths() {
                let full = dir.join(p);
                let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
                h.update(p.as_bytes());
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Temporal holdout split: the last `fraction` of records by frame id (at least one).
    pub fn split_holdout(&self, fraction: f64) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
        let mut recs = self.records.clone();
        recs.sort_by_key(|r| r.frame_id);
        let n = recs.len();
        let k = if n < 2 { 0 } else { ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1) };
        let hold = recs.split_off(n - k);
        (recs, hold)
    }
}

enum Outcome {
    Record(Box<DatasetRecord>),
    Skipped(String),
}

struct FrameContext<'a> {
    backends: &'a Backends,
    cfg: &'a DatasetConfig,
    out_dir: &'a Path,
}

/// Downscale so the short side is at most `short_side`.
pub fn to_working_resolution(img: &Image, short_side: usize) -> Image {
    let (h, w) = img.dims();
    let s = h.min(w);
    if s <= short_side {
        return img.clone();
    }
    let f = short_side as f64 / s as f64;
    let nh = ((h as f64 * f).round() as usize).max(1);
    let nw = ((w as f64 * f).round() as usize).max(1);
    imaging::resize(img, nh, nw)
}

/// Rendered vm and simplified DensePose for a full frame, with the DensePose map.
pub struct FrameRepresentation {
    pub vm: Image,
    pub dp: Image,
    pub sdp: Image,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Run pose and DensePose on one frame and build the full-frame representation.
/// `Ok(None)` when no person (or no upper body) is found.
pub fn frame_representation(
    frame: &Frame,
    backends: &Backends,
    set: &SimplificationSet,
    texture: &GridTexture,
) -> Result<Option<FrameRepresentation>> {
    let (h, w) = frame.image.dims();
    let Some(pose) = backends.pose.estimate_pose(frame)? else {
        return Ok(None);
    };
    let Some(dp_map) = backends.densepose.estimate_densepose(frame)? else {
        return Ok(None);
    };
    let Some(bbox) = densepose_prep::upper_body_bbox(&dp_map) else {
        return Ok(None);
    };
    let mesh = measurement_garment::trim_smpl(&pose.smpl())?;
    let vm = measurement_garment::render_measurement_garment(&mesh, texture, &pose.camera, h, w)?;
    let dp = densepose_prep::encode_iuv(&dp_map)?;
    let sdp = densepose_prep::simplify(&dp, set)?.data;
    Ok(Some(FrameRepresentation {
        vm,
        dp,
        sdp,
        bbox,
        confidence: pose.confidence,
    }))
}

fn stem(frame_id: u64) -> String {
    format!("{FRAMES_DIR}/{frame_id:06}")
}

fn process_frame(ctx: &FrameContext, frame: &Frame) -> Result<Outcome> {
    let cfg = ctx.cfg;
    let rep = match frame_representation(frame, ctx.backends, &cfg.simplification_set, &cfg.texture) {
        Ok(Some(r)) => r,
        Ok(None) => return Ok(Outcome::Skipped("no person detected".into())),
        Err(Error::Backend(m)) => return Ok(Outcome::Skipped(format!("backend failure: {m}"))),
        Err(e) => return Err(e),
    };
    let parse = match ctx.backends.parse.parse_garment(frame) {
        Ok(p) => p,
        Err(Error::Backend(m)) => return Ok(Outcome::Skipped(format!("backend failure: {m}"))),
        Err(e) => return Err(e),
    };
    if parse.garment_mask.sum() == 0.0 {
        return Ok(Outcome::Skipped("empty garment mask".into()));
    }
    let (h, w) = frame.image.dims();
    let roi = RoiTransform::around_box(rep.bbox, cfg.roi_padding, cfg.roi_size);
    let vm = imaging::roi_extract(&rep.vm, &roi, Interp::Bilinear)?;
    let sdp = imaging::roi_extract(&rep.sdp, &roi, Interp::Nearest)?;
    let dp = imaging::roi_extract(&rep.dp, &roi, Interp::Nearest)?;
    let mask = imaging::roi_extract_mask(&parse.garment_mask, &roi)?;
    let garment = imaging::roi_extract(&parse.garment_image, &roi, Interp::Bilinear)?;
    let garment = imaging::composite(&Image::zeros(3, cfg.roi_size, cfg.roi_size), &garment, &mask)?;

    let s = stem(frame.id);
    let rec = DatasetRecord {
        frame_id: frame.id,
        vm_path: format!("{s}_vm.png"),
        sdp_path: format!("{s}_sdp.png"),
        dp_path: format!("{s}_dp.png"),
        garment_path: format!("{s}_garment.png"),
        mask_path: format!("{s}_mask.png"),
        roi,
        bbox: rep.bbox,
        pose_confidence: rep.confidence,
        partial: rep.bbox.touches_border(h, w),
    };
    let dir = ctx.out_dir;
    imaging::save_png(&vm, &dir.join(&rec.vm_path))?;
    imaging::save_png(&sdp, &dir.join(&rec.sdp_path))?;
    imaging::save_png(&dp, &dir.join(&rec.dp_path))?;
    imaging::save_png(&garment, &dir.join(&rec.garment_path))?;
    imaging::save_mask_png(&mask, &dir.join(&rec.mask_path))?;
    Ok(Outcome::Record(Box::new(rec)))
}

/// Process a capture video into a dataset under `out_dir` and write its manifest.
pub fn build_dataset(
    source: &mut dyn FrameSource,
    backends: &Backends,
    garment_id: &str,
    cfg: &DatasetConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    backends.probe(true)?;
    if garment_id.is_empty() {
        return Err(Error::config("garment id must not be empty"));
    }
    let frames_dir = out_dir.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let ctx = FrameContext {
        backends,
        cfg,
        out_dir,
    };

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut next_id = 0u64;
    let mut capture: Option<CaptureMetadata> = None;
    loop {
        let mut chunk = Vec::with_capacity(cfg.chunk_size);
        while chunk.len() < cfg.chunk_size {
            match source.next_frame()? {
                Some(img) => {
                    if img.channels() != 3 {
                        return Err(Error::invalid(format!("frame {next_id} is not RGB")));
                    }
                    let work = to_working_resolution(&img, cfg.working_short_side);
                    let meta = CaptureMetadata {
                        width: img.width(),
                        height: img.height(),
                        working_width: work.width(),
                        working_height: work.height(),
                        fps: source.fps(),
                    };
                    match &capture {
                        None => capture = Some(meta),
                        Some(c) if (c.width, c.height) != (meta.width, meta.height) => {
                            return Err(Error::invalid(format!("frame {next_id} changes the video resolution")));
                        }
                        Some(_) => {}
                    }
                    chunk.push(Frame::new(next_id, work));
                    next_id += 1;
                }
                None => break,
            }
        }
        if chunk.is_empty() {
            break;
        }
        let outcomes: Vec<Result<Outcome>> = chunk.par_iter().map(|f| process_frame(&ctx, f)).collect();
        for (frame, outcome) in chunk.iter().zip(outcomes) {
            match outcome? {
                Outcome::Record(r) => records.push(*r),
                Outcome::Skipped(reason) => {
                    log::warn!("skipping frame {}: {reason}", frame.id);
                    skipped.push(SkippedFrame {
                        frame_id: frame.id,
                        reason,
                    });
                }
            }
        }
    }
    let Some(capture) = capture else {
        return Err(Error::invalid("video has no frames"));
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("all {next_id} frames were skipped")));
    }
    let mut manifest = DatasetManifest {
        garment_id: garment_id.to_string(),
        pipeline_version: PIPELINE_VERSION.to_string(),
        capture,
        config: cfg.clone(),
        simplification_set: cfg.simplification_set.clone(),
        total_frames: next_id,
        records,
        skipped,
        content_hash: String::new(),
    };
    manifest.content_hash = manifest.compute_hash(out_dir)?;
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Replace every record's garment and mask with `f(vm)`, then rehash and save.
pub fn rewrite_targets(dir: &Path, f: impl Fn(&Image) -> (Image, SoftMask) + Sync) -> Result<DatasetManifest> {
    let mut m = DatasetManifest::load(dir)?;
    m.records.par_iter().try_for_each(|r| -> Result<()> {
        let vm = imaging::load_png(&dir.join(&r.vm_path))?;
        let (g, mask) = f(&vm);
        imaging::save_png(&g, &dir.join(&r.garment_path))?;
        imaging::save_mask_png(&mask, &dir.join(&r.mask_path))
    })?;
    m.content_hash = m.compute_hash(dir)?;
    m.save(dir)?;
    Ok(m)
}

// --- validation --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCheck {
    pub frame_id: u64,
    pub ok: bool,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: Vec<RecordCheck>,
    pub passed: usize,
    pub failed: usize,
    pub hash_matches: bool,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failed == 0 && self.hash_matches && !self.records.is_empty()
    }
}

fn check_record(dir: &Path, r: &DatasetRecord, side: usize) -> RecordCheck {
    let mut problems = Vec::new();
    let mut load = |p: &str| -> Option<Image> {
        match imaging::load_png(&dir.join(p)) {
            Ok(img) => {
                if img.dims() != (side, side) {
                    problems.push(format!("{p}: {}x{} instead of {side}x{side}", img.width(), img.height()));
                }
                Some(img)
            }
            Err(e) => {
                problems.push(e.to_string());
                None
            }
        }
    };
    let _vm = load(&r.vm_path);
    let _sdp = load(&r.sdp_path);
    let _dp = load(&r.dp_path);
    let garment = load(&r.garment_path);
    let mask = load(&r.mask_path);
    if let Some(mask) = &mask {
        if mask.channels() != 1 {
            problems.push(format!("{}: mask has {} channels", r.mask_path, mask.channels()));
        } else if mask.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
            problems.push(format!("{}: mask is not binary", r.mask_path));
        }
        if let Some(g) = &garment {
            if g.dims() == mask.dims() && mask.channels() == 1 {
                let (h, w) = g.dims();
                let leak = (0..h * w).any(|i| {
                    let (y, x) = (i / w, i % w);
                    mask.get(0, y, x) == 0.0 && (0..g.channels()).any(|c| g.get(c, y, x) != 0.0)
                });
                if leak {
                    problems.push(format!("{}: garment is nonzero outside the mask", r.garment_path));
                }
            }
        }
    }
    RecordCheck {
        frame_id: r.frame_id,
        ok: problems.is_empty(),
        problems,
    }
}

/// Check every record's files; problems are reported, not raised.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport> {
    let m = DatasetManifest::load(dir)?;
    let side = m.config.roi_size;
    let records: Vec<RecordCheck> = m.records.par_iter().map(|r| check_record(dir, r, side)).collect();
    let hash_matches = m.compute_hash(dir).map(|h| h == m.content_hash).unwrap_or(false);
    let passed = records.iter().filter(|r| r.ok).count();
    Ok(ValidationReport {
        failed: records.len() - passed,
        passed,
        records,
        hash_matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_protocol_has_fourteen_symmetric_poses() {
        let p = CaptureProtocol::default();
        p.validate().unwrap();
        assert_eq!(p.poses.len(), 14);
        let g = capture_session_guide(&p);
        assert_eq!(g.entries.len(), 14);
        assert!((g.total_s - 120.0).abs() <= 10.0);
        for (i, e) in g.entries.iter().enumerate() {
            assert!((e.duration_s - 120.0 / 14.0).abs() < 1e-9);
            assert!((e.start_s - i as f64 * 120.0 / 14.0).abs() < 1e-9);
            assert_eq!(e.rotation_deg, 360.0);
        }
        assert!((g.entries[0].duration_s - 8.571).abs() < 1e-3);
    }

    #[test]
    fn asymmetric_pose_is_rejected() {
        let mut p = CaptureProtocol::default();
        p.poses[3].left_arm.elbow_deg += 10.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn guide_images_render() {
        let p = CaptureProtocol::default();
        let img = render_guide_image(&p.poses[3], 64, 48).unwrap();
        assert!(img.data().iter().any(|v| *v > 0.0));
    }

    #[test]
    fn working_resolution_only_downscales() {
        let img = Image::zeros(3, 2160, 3840);
        let w = to_working_resolution(&Image::zeros(3, 216, 384), 1024);
        assert_eq!(w.dims(), (216, 384));
        let w = to_working_resolution(&img, 1024);
        assert_eq!(w.dims(), (1024, 1820));
    }

    #[test]
    fn holdout_is_temporal_tail() {
        let rec = |id| DatasetRecord {
            frame_id: id,
            vm_path: String::new(),
            sdp_path: String::new(),
            dp_path: String::new(),
            garment_path: String::new(),
            mask_path: String::new(),
            roi: RoiTransform::full(4),
            bbox: BoundingBox::singleton(0, 0),
            pose_confidence: 1.0,
            partial: false,
        };
        let m = DatasetManifest {
            garment_id: "g".into(),
            pipeline_version: PIPELINE_VERSION.into(),
            capture: CaptureMetadata {
                width: 4,
                height: 4,
                working_width: 4,
                working_height: 4,
                fps: 30.0,
            },
            config: DatasetConfig::default(),
            simplification_set: SimplificationSet::default(),
            total_frames: 40,
            records: (0..40).rev().map(rec).collect(),
            skipped: vec![],
            content_hash: String::new(),
        };
        let (train, hold) = m.split_holdout(0.05);
        assert_eq!(hold.iter().map(|r| r.frame_id).collect::<Vec<_>>(), vec![38, 39]);
        assert_eq!(train.len(), 38);
        assert!(train.iter().all(|r| r.frame_id < 38));
    }
}
