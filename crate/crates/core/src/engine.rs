//! Inference: frame → representation → garment synthesis → inverse ROI →
//! composite, as a single call or as a pipelined session, plus the garment
//! catalog and live selection.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};
use serde::{Deserialize, Serialize};

use crate::densepose_prep::{self, SimplificationSet};
use crate::error::{Error, Result};
use crate::gsnet::{Checkpoint, GsNet, Mode};
use crate::imaging::{self, BoundingBox, Image, Interp, RoiTransform, SoftMask};
use crate::measurement_garment::{self, GridTexture};
use crate::perception::{Backends, Frame};
use crate::trainer::{mode_input, FINAL_CHECKPOINT};
use crate::video::{FrameSink, FrameSource};

pub const CATALOG_FILE: &str = "catalog.json";
pub const LATENCY_FILE: &str = "latency.json";

/// One try-on garment as listed in a catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarmentCatalogEntry {
    pub garment_id: String,
    /// checkpoint path, relative to the catalog directory
    pub checkpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preview: Option<String>,
    pub mode: Mode,
    #[serde(default)]
    pub simplification_set: SimplificationSet,
    /// network input side
    pub roi_size: usize,
}

/// A catalog entry with its network loaded.
#[derive(Debug)]
pub struct LoadedGarment {
    pub entry: GarmentCatalogEntry,
    pub net: GsNet,
}

impl LoadedGarment {
    /// Wrap an in-memory network (tests, tools).
    pub fn from_net(garment_id: &str, net: GsNet, roi_size: usize) -> Self {
        Self {
            entry: GarmentCatalogEntry {
                garment_id: garment_id.into(),
                checkpoint: String::new(),
                preview: None,
                mode: net.arch.mode,
                simplification_set: SimplificationSet::default(),
                roi_size,
            },
            net,
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CatalogFile {
    garments: Vec<GarmentCatalogEntry>,
}

#[derive(Debug)]
pub struct Catalog {
    pub dir: PathBuf,
    garments: Vec<Arc<LoadedGarment>>,
}

impl Catalog {
    pub fn from_garments(garments: Vec<Arc<LoadedGarment>>) -> Result<Self> {
        if garments.is_empty() {
            return Err(Error::config("catalog has no garments"));
        }
        Ok(Self {
            dir: PathBuf::new(),
            garments,
        })
    }

    /// Load `catalog.json` from `dir`, or, without one, treat every
    /// subdirectory holding a final checkpoint as a garment named after it.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("catalog directory not found: {}", dir.display())));
        }
        let file = dir.join(CATALOG_FILE);
        let entries = if file.exists() {
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            let parsed: CatalogFile =
                serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", file.display())))?;
            parsed.garments
        } else {
            discover(dir)?
        };
        let mut seen = std::collections::HashSet::new();
        let mut garments = Vec::new();
        for entry in entries {
            if !seen.insert(entry.garment_id.clone()) {
                return Err(Error::config(format!("duplicate garment id {}", entry.garment_id)));
            }
            let ck = Checkpoint::load(&dir.join(&entry.checkpoint))?;
            if ck.mode() != entry.mode {
                return Err(Error::config(format!(
                    "garment {}: catalog says mode {}, checkpoint is {}",
                    entry.garment_id,
                    entry.mode,
                    ck.mode()
                )));
            }
            let m = ck.net.arch.side_multiple();
            if entry.roi_size % m != 0 {
                return Err(Error::config(format!("garment {}: ROI size must be a multiple of {m}", entry.garment_id)));
            }
            garments.push(Arc::new(LoadedGarment { entry, net: ck.net }));
        }
        if garments.is_empty() {
            return Err(Error::config(format!("no garments found in {}", dir.display())));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            garments,
        })
    }

    /// Write a `catalog.json` describing `entries` into `dir`.
    pub fn write(dir: &Path, entries: &[GarmentCatalogEntry]) -> Result<()> {
        let path = dir.join(CATALOG_FILE);
        let text = serde_json::to_string_pretty(&CatalogFile {
            garments: entries.to_vec(),
        })
        .map_err(|e| Error::json("catalog", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn get(&self, id: &str) -> Option<Arc<LoadedGarment>> {
        self.garments.iter().find(|g| g.entry.garment_id == id).cloned()
    }

    pub fn first(&self) -> Arc<LoadedGarment> {
        Arc::clone(&self.garments[0])
    }

    pub fn entries(&self) -> Vec<GarmentCatalogEntry> {
        self.garments.iter().map(|g| g.entry.clone()).collect()
    }
}

impl Catalog {
    /// A one-garment catalog from a checkpoint file; the id is the file stem.
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let id = path.file_stem().and_then(|n| n.to_str()).unwrap_or("garment").to_string();
        let entry = GarmentCatalogEntry {
            garment_id: id,
            checkpoint: path.display().to_string(),
            preview: None,
            mode: ck.mode(),
            simplification_set: SimplificationSet::default(),
            roi_size: checkpoint_roi_size(&ck),
        };
        Ok(Self {
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            garments: vec![Arc::new(LoadedGarment { entry, net: ck.net })],
        })
    }
}

fn checkpoint_roi_size(ck: &Checkpoint) -> usize {
    ck.state["config"]["roi_size"].as_u64().unwrap_or(512) as usize
}

fn discover(dir: &Path) -> Result<Vec<GarmentCatalogEntry>> {
    let mut out = Vec::new();
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(FINAL_CHECKPOINT).exists())
        .collect();
    subdirs.sort();
    for p in subdirs {
        let id = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let ck_rel = format!("{id}/{FINAL_CHECKPOINT}");
        let ck = Checkpoint::load(&dir.join(&ck_rel))?;
        let roi_size = checkpoint_roi_size(&ck);
        let preview = p.join("preview.png").exists().then(|| format!("{id}/preview.png"));
        out.push(GarmentCatalogEntry {
            garment_id: id,
            checkpoint: ck_rel,
            preview,
            mode: ck.mode(),
            simplification_set: SimplificationSet::default(),
            roi_size,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// padding around the upper-body box, as a fraction of its larger side
    pub roi_padding: f64,
    pub texture: GridTexture,
    /// consecutive backend failures bridged by reusing the last representation
    pub grace_frames: usize,
    /// depth of each inter-stage queue
    pub queue_depth: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            roi_padding: 0.15,
            texture: GridTexture::default(),
            grace_frames: 5,
            queue_depth: 2,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.roi_padding) || self.queue_depth == 0 {
            return Err(Error::config("ROI padding must be in [0,2] and queue depth positive"));
        }
        self.texture.validate().map_err(|e| Error::config(e.to_string()))
    }
}

/// Per-stage processing time in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLatency {
    pub pose_ms: f64,
    pub densepose_ms: f64,
    pub gs_ms: f64,
    pub composite_ms: f64,
}

impl StageLatency {
    pub fn total(&self) -> f64 {
        self.pose_ms + self.densepose_ms + self.gs_ms + self.composite_ms
    }
}

#[derive(Debug, Clone)]
pub struct TryOnFrameResult {
    pub frame_id: u64,
    pub output: Image,
    pub latency: StageLatency,
    /// wall time from the start of the first stage to the end of the last, queueing included
    pub wall_ms: f64,
    pub passthrough: bool,
    /// garment whose network produced the frame
    pub garment_id: Option<String>,
}

/// Full-frame person representation.
#[derive(Debug, Clone)]
pub struct Representation {
    pub vm: Image,
    /// encoded DensePose (part/24, u, v)
    pub dp: Image,
    pub bbox: BoundingBox,
}

/// Bridges short runs of backend failures with the last good representation.
#[derive(Debug, Default)]
pub struct GraceState {
    last: Option<Arc<Representation>>,
    failures: usize,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Pose and DensePose stages. `Ok(None)` means pass the frame through.
pub fn perceive(
    frame: &Frame,
    backends: &Backends,
    cfg: &EngineConfig,
    grace: &mut GraceState,
    latency: &mut StageLatency,
) -> Result<Option<Arc<Representation>>> {
    let (h, w) = frame.image.dims();
    let t0 = Instant::now();
    let pose = backends.pose.estimate_pose(frame);
    let vm = match pose {
        Ok(Some(p)) => Ok(Some(measurement_garment::render_measurement_garment(
            &measurement_garment::trim_smpl(&p.smpl())?,
            &cfg.texture,
            &p.camera,
            h,
            w,
        )?)),
        other => other.map(|_| None),
    };
    let t1 = Instant::now();
    latency.pose_ms = ms(t1 - t0);
    let rep = vm.and_then(|vm| {
        let Some(vm) = vm else { return Ok(None) };
        let Some(map) = backends.densepose.estimate_densepose(frame)? else {
            return Ok(None);
        };
        let Some(bbox) = densepose_prep::upper_body_bbox(&map) else {
            return Ok(None);
        };
        Ok(Some(Representation {
            vm,
            dp: densepose_prep::encode_iuv(&map)?,
            bbox,
        }))
    });
    latency.densepose_ms = ms(t1.elapsed());
    match rep {
        Ok(Some(r)) => {
            let r = Arc::new(r);
            grace.last = Some(Arc::clone(&r));
            grace.failures = 0;
            Ok(Some(r))
        }
        Ok(None) => {
            grace.last = None;
            grace.failures = 0;
            Ok(None)
        }
        Err(Error::Backend(msg)) => {
            grace.failures += 1;
            match &grace.last {
                Some(r) if grace.failures <= cfg.grace_frames => {
                    log::debug!("frame {}: backend failure ({msg}), reusing previous representation", frame.id);
                    Ok(Some(Arc::clone(r)))
                }
                _ => {
                    log::warn!("frame {}: backend failure ({msg}), passing through", frame.id);
                    Ok(None)
                }
            }
        }
        Err(e) => Err(e),
    }
}

/// ROI crop, network and inverse ROI: full-frame garment and soft mask.
pub fn synthesize(rep: &Representation, garment: &LoadedGarment, cfg: &EngineConfig, h: usize, w: usize) -> Result<(Image, SoftMask)> {
    let roi = RoiTransform::around_box(rep.bbox, cfg.roi_padding, garment.entry.roi_size);
    let vm = imaging::roi_extract(&rep.vm, &roi, Interp::Bilinear)?;
    let dp = imaging::roi_extract(&rep.dp, &roi, Interp::Nearest)?;
    let sdp = densepose_prep::simplify(&dp, &garment.entry.simplification_set)?.data;
    let x = mode_input(garment.net.arch.mode, &vm, &sdp, &dp)?;
    let out = garment.net.gs_forward(&x)?;
    let g = imaging::roi_inverse(&out.garment, &roi, h, w, Interp::Bilinear)?;
    let m = imaging::roi_inverse(&out.mask.to_image(), &roi, h, w, Interp::Bilinear)?;
    Ok((g, SoftMask::from_image(&m)?))
}

/// Run every stage on one frame.
pub fn tryon_frame(
    frame: &Frame,
    garment: &LoadedGarment,
    backends: &Backends,
    cfg: &EngineConfig,
    grace: &mut GraceState,
) -> Result<TryOnFrameResult> {
    let start = Instant::now();
    let mut latency = StageLatency::default();
    let rep = perceive(frame, backends, cfg, grace, &mut latency)?;
    let (output, passthrough, garment_id) = match rep {
        None => (frame.image.clone(), true, None),
        Some(rep) => {
            let (h, w) = frame.image.dims();
            let t = Instant::now();
            let (g, m) = synthesize(&rep, garment, cfg, h, w)?;
            latency.gs_ms = ms(t.elapsed());
            let t = Instant::now();
            let out = imaging::composite(&frame.image, &g, &m)?;
            latency.composite_ms = ms(t.elapsed());
            (out, false, Some(garment.entry.garment_id.clone()))
        }
    };
    Ok(TryOnFrameResult {
        frame_id: frame.id,
        output,
        latency,
        wall_ms: ms(start.elapsed()),
        passthrough,
        garment_id,
    })
}

/// Garment selection shared between the control plane and a running session.
///
/// A request takes effect from the first frame ingested after it, so a frame
/// already inside the pipeline always finishes with the garment it started with.
#[derive(Debug)]
pub struct Selection {
    inner: Mutex<SelectionState>,
}

#[derive(Debug)]
struct SelectionState {
    /// `(first frame id, garment)`, ascending
    schedule: Vec<(u64, Arc<LoadedGarment>)>,
    next_frame: u64,
}

impl Selection {
    pub fn new(initial: Arc<LoadedGarment>) -> Self {
        Self {
            inner: Mutex::new(SelectionState {
                schedule: vec![(0, initial)],
                next_frame: 0,
            }),
        }
    }

    /// Switch garments; returns the first frame id that will use it.
    pub fn select(&self, garment: Arc<LoadedGarment>) -> u64 {
        let mut s = self.inner.lock().expect("selection lock");
        let from = s.next_frame;
        s.schedule.retain(|(f, _)| *f < from);
        s.schedule.push((from, garment));
        from
    }

    /// Record that `frame_id` has been ingested.
    fn ingested(&self, frame_id: u64) {
        let mut s = self.inner.lock().expect("selection lock");
        s.next_frame = s.next_frame.max(frame_id + 1);
    }

    /// Garment for `frame_id`; older schedule entries are pruned.
    fn for_frame(&self, frame_id: u64) -> Arc<LoadedGarment> {
        let mut s = self.inner.lock().expect("selection lock");
        let idx = s.schedule.iter().rposition(|(f, _)| *f <= frame_id).unwrap_or(0);
        let g = Arc::clone(&s.schedule[idx].1);
        s.schedule.drain(..idx);
        g
    }

    pub fn current(&self) -> Arc<LoadedGarment> {
        let s = self.inner.lock().expect("selection lock");
        Arc::clone(&s.schedule.last().expect("non-empty schedule").1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// bounded queues that drop the oldest frame when full
    Live,
    /// blocking queues, every frame is processed
    Offline,
}

/// Rolling session statistics.
#[derive(Debug, Default)]
pub struct Stats {
    inner: Mutex<StatsInner>,
    dropped: AtomicU64,
}

#[derive(Debug, Default)]
struct StatsInner {
    recent: std::collections::VecDeque<(Instant, StageLatency, f64)>,
    frames: u64,
    passthrough: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    /// results in the last second
    pub fps: f64,
    pub frames: u64,
    pub passthrough: u64,
    pub dropped: u64,
    /// mean stage latency over the last second
    pub latency: StageLatency,
    pub wall_ms: f64,
}

impl Stats {
    fn record(&self, r: &TryOnFrameResult) {
        let mut s = self.inner.lock().expect("stats lock");
        let now = Instant::now();
        s.recent.push_back((now, r.latency, r.wall_ms));
        while s.recent.front().is_some_and(|(t, _, _)| now.duration_since(*t) > Duration::from_secs(1)) {
            s.recent.pop_front();
        }
        s.frames += 1;
        s.passthrough += r.passthrough as u64;
    }

    fn drop_one(&self) {
        self.dropped.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let s = self.inner.lock().expect("stats lock");
        let now = Instant::now();
        let recent: Vec<_> = s
            .recent
            .iter()
            .filter(|(t, _, _)| now.duration_since(*t) <= Duration::from_secs(1))
            .collect();
        let n = recent.len().max(1) as f64;
        let mut lat = StageLatency::default();
        let mut wall = 0.0;
        for (_, l, w) in &recent {
            lat.pose_ms += l.pose_ms / n;
            lat.densepose_ms += l.densepose_ms / n;
            lat.gs_ms += l.gs_ms / n;
            lat.composite_ms += l.composite_ms / n;
            wall += w / n;
        }
        StatsSnapshot {
            fps: recent.len() as f64,
            frames: s.frames,
            passthrough: s.passthrough,
            dropped: self.dropped.load(Ordering::Relaxed),
            latency: lat,
            wall_ms: wall,
        }
    }
}

/// Everything a session needs.
pub struct Engine {
    pub catalog: Catalog,
    pub backends: Backends,
    pub config: EngineConfig,
    pub selection: Selection,
    pub stats: Stats,
}

impl Engine {
    pub fn new(catalog: Catalog, backends: Backends, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let first = catalog.first();
        Ok(Self {
            catalog,
            backends,
            config,
            selection: Selection::new(first),
            stats: Stats::default(),
        })
    }

    /// Select a garment by id; returns the first frame id that uses it.
    pub fn select(&self, garment_id: &str) -> Result<u64> {
        let g = self
            .catalog
            .get(garment_id)
            .ok_or_else(|| Error::invalid(format!("unknown garment id {garment_id:?}")))?;
        Ok(self.selection.select(g))
    }
}

/// Queue between two stages; in live mode a full queue drops its oldest item.
struct StageQueue<T> {
    tx: Sender<T>,
    rx: Receiver<T>,
    lossy: bool,
}

impl<T> Clone for StageQueue<T> {
    fn clone(&self) -> Self {
        Self {
            tx: self.tx.clone(),
            rx: self.rx.clone(),
            lossy: self.lossy,
        }
    }
}

impl<T> StageQueue<T> {
    fn new(depth: usize, mode: SessionMode) -> Self {
        let (tx, rx) = bounded(depth);
        Self {
            tx,
            rx,
            lossy: mode == SessionMode::Live,
        }
    }

    /// Returns false once the receiving side is gone.
    fn push(&self, mut item: T, stats: &Stats) -> bool {
        if !self.lossy {
            return self.tx.send(item).is_ok();
        }
        loop {
            match self.tx.try_send(item) {
                Ok(()) => return true,
                Err(TrySendError::Disconnected(_)) => return false,
                Err(TrySendError::Full(back)) => {
                    item = back;
                    match self.rx.try_recv() {
                        Ok(_) => stats.drop_one(),
                        Err(TryRecvError::Empty) => {}
                        Err(TryRecvError::Disconnected) => return false,
                    }
                }
            }
        }
    }
}

struct Perceived {
    frame: Frame,
    rep: Option<Arc<Representation>>,
    latency: StageLatency,
    started: Instant,
}

struct Synthesized {
    frame: Frame,
    layers: Option<(Image, SoftMask, String)>,
    latency: StageLatency,
    started: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub frames_in: u64,
    pub frames_out: u64,
    pub dropped: u64,
    pub seconds: f64,
}

/// Run the staged pipeline over `source`, delivering results in order to
/// `on_result` on the calling thread. Frame ids count up from 0 in source order.
pub fn run_session(
    engine: &Engine,
    source: &mut dyn FrameSource,
    mode: SessionMode,
    on_result: impl FnMut(TryOnFrameResult) -> Result<()>,
) -> Result<SessionSummary> {
    let mut next_id = 0u64;
    run_session_with_ids(
        engine,
        || {
            let img = source.next_frame()?;
            Ok(img.map(|image| {
                let f = Frame::new(next_id, image);
                next_id += 1;
                f
            }))
        },
        mode,
        on_result,
    )
}

/// [`run_session`] over frames that already carry ids; ids must increase.
pub fn run_session_with_ids(
    engine: &Engine,
    mut next: impl FnMut() -> Result<Option<Frame>> + Send,
    mode: SessionMode,
    mut on_result: impl FnMut(TryOnFrameResult) -> Result<()>,
) -> Result<SessionSummary> {
    let depth = engine.config.queue_depth;
    let q_in: StageQueue<(Frame, Instant)> = StageQueue::new(depth, mode);
    let q_rep: StageQueue<Perceived> = StageQueue::new(depth, mode);
    let q_syn: StageQueue<Synthesized> = StageQueue::new(depth, mode);
    // results are never dropped: the consumer is the caller
    let (out_tx, out_rx) = bounded::<TryOnFrameResult>(depth);
    let error: Mutex<Option<Error>> = Mutex::new(None);
    let fail = |e: Error| {
        let mut slot = error.lock().expect("error lock");
        if slot.is_none() {
            *slot = Some(e);
        }
    };
    let stop = std::sync::atomic::AtomicBool::new(false);
    let started = Instant::now();
    let dropped_before = engine.stats.dropped.load(Ordering::Relaxed);
    let frames_in = AtomicU64::new(0);
    let mut frames_out = 0u64;

    std::thread::scope(|s| {
        let (q_in_w, q_rep_w, q_syn_w) = (q_in.clone(), q_rep.clone(), q_syn.clone());
        let (stop, fail, frames_in) = (&stop, &fail, &frames_in);
        s.spawn(move || {
            let mut last: Option<u64> = None;
            while !stop.load(Ordering::Relaxed) {
                match next() {
                    Ok(Some(f)) => {
                        if last.is_some_and(|l| f.id <= l) {
                            log::warn!("dropping out-of-order frame {}", f.id);
                            continue;
                        }
                        last = Some(f.id);
                        engine.selection.ingested(f.id);
                        frames_in.fetch_add(1, Ordering::Relaxed);
                        if !q_in_w.push((f, Instant::now()), &engine.stats) {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
            drop(q_in_w);
        });
        let q_in_r = q_in.rx.clone();
        drop(q_in);
        s.spawn(move || {
            let mut grace = GraceState::default();
            for (frame, started) in q_in_r.iter() {
                let mut latency = StageLatency::default();
                match perceive(&frame, &engine.backends, &engine.config, &mut grace, &mut latency) {
                    Ok(rep) => {
                        if !q_rep_w.push(
                            Perceived {
                                frame,
                                rep,
                                latency,
                                started,
                            },
                            &engine.stats,
                        ) {
                            break;
                        }
                    }
                    Err(e) => {
                        fail(e);
                        break;
                    }
                }
            }
        });
        let q_rep_r = q_rep.rx.clone();
        drop(q_rep);
        s.spawn(move || {
            for p in q_rep_r.iter() {
                let Perceived {
                    frame,
                    rep,
                    mut latency,
                    started,
                } = p;
                let layers = match rep {
                    None => None,
                    Some(rep) => {
                        let garment = engine.selection.for_frame(frame.id);
                        let t = Instant::now();
                        let (h, w) = frame.image.dims();
                        match synthesize(&rep, &garment, &engine.config, h, w) {
                            Ok((g, m)) => {
                                latency.gs_ms = ms(t.elapsed());
                                Some((g, m, garment.entry.garment_id.clone()))
                            }
                            Err(e) => {
                                fail(e);
                                break;
                            }
                        }
                    }
                };
                if !q_syn_w.push(
                    Synthesized {
                        frame,
                        layers,
                        latency,
                        started,
                    },
                    &engine.stats,
                ) {
                    break;
                }
            }
        });
        let q_syn_r = q_syn.rx.clone();
        drop(q_syn);
        s.spawn(move || {
            for syn in q_syn_r.iter() {
                let Synthesized {
                    frame,
                    layers,
                    mut latency,
                    started,
                } = syn;
                let (output, passthrough, garment_id) = match layers {
                    None => (frame.image, true, None),
                    Some((g, m, id)) => {
                        let t = Instant::now();
                        match imaging::composite(&frame.image, &g, &m) {
                            Ok(o) => {
                                latency.composite_ms = ms(t.elapsed());
                                (o, false, Some(id))
                            }
                            Err(e) => {
                                fail(e);
                                break;
                            }
                        }
                    }
                };
                let r = TryOnFrameResult {
                    frame_id: frame.id,
                    output,
                    latency,
                    wall_ms: ms(started.elapsed()),
                    passthrough,
                    garment_id,
                };
                if out_tx.send(r).is_err() {
                    break;
                }
            }
        });
        let mut last_report = Instant::now();
        for r in out_rx.iter() {
            engine.stats.record(&r);
            frames_out += 1;
            if last_report.elapsed() >= Duration::from_secs(1) {
                last_report = Instant::now();
                let s = engine.stats.snapshot();
                log::info!(
                    "{:.1} fps, pose {:.1} ms, densepose {:.1} ms, gs {:.1} ms, composite {:.1} ms, dropped {}",
                    s.fps,
                    s.latency.pose_ms,
                    s.latency.densepose_ms,
                    s.latency.gs_ms,
                    s.latency.composite_ms,
                    s.dropped
                );
            }
            if let Err(e) = on_result(r) {
                fail(e);
                break;
            }
        }
        stop.store(true, Ordering::Relaxed);
        // unblock any stage still waiting to hand over a result
        drop(out_rx);
    });
    if let Some(e) = error.into_inner().expect("error lock") {
        return Err(e);
    }
    Ok(SessionSummary {
        frames_in: frames_in.into_inner(),
        frames_out,
        dropped: engine.stats.dropped.load(Ordering::Relaxed) - dropped_before,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Per-frame record in the latency file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLatency {
    pub frame_id: u64,
    pub passthrough: bool,
    pub latency: StageLatency,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub garment_id: String,
    pub frames: u64,
    pub passthrough: u64,
    pub seconds: f64,
    pub fps: f64,
    pub mean_latency: StageLatency,
    pub per_frame: Vec<FrameLatency>,
}

/// Offline inference of a whole video: every input frame yields one output frame.
pub fn infer_video(
    engine: &Engine,
    source: &mut dyn FrameSource,
    mut sink_for: impl FnMut(usize, usize) -> Result<Box<dyn FrameSink>>,
) -> Result<InferenceSummary> {
    let garment_id = engine.selection.current().entry.garment_id.clone();
    let mut sink: Option<Box<dyn FrameSink>> = None;
    let mut per_frame = Vec::new();
    let mut dims = None;
    let summary = run_session(engine, source, SessionMode::Offline, |r| {
        let d = r.output.dims();
        if *dims.get_or_insert(d) != d {
            return Err(Error::invalid("input frames change size mid-video"));
        }
        if sink.is_none() {
            sink = Some(sink_for(d.0, d.1)?);
        }
        sink.as_mut().expect("sink created").write_frame(&r.output)?;
        per_frame.push(FrameLatency {
            frame_id: r.frame_id,
            passthrough: r.passthrough,
            latency: r.latency,
            wall_ms: r.wall_ms,
        });
        Ok(())
    })?;
    if let Some(s) = sink {
        s.finish()?;
    }
    if summary.frames_in == 0 {
        return Err(Error::invalid("input video has no frames"));
    }
    let n = per_frame.len().max(1) as f64;
    let mut mean = StageLatency::default();
    for f in &per_frame {
        mean.pose_ms += f.latency.pose_ms / n;
        mean.densepose_ms += f.latency.densepose_ms / n;
        mean.gs_ms += f.latency.gs_ms / n;
        mean.composite_ms += f.latency.composite_ms / n;
    }
    Ok(InferenceSummary {
        garment_id,
        frames: per_frame.len() as u64,
        passthrough: per_frame.iter().filter(|f| f.passthrough).count() as u64,
        seconds: summary.seconds,
        fps: per_frame.len() as f64 / summary.seconds.max(1e-9),
        mean_latency: mean,
        per_frame,
    })
}

/// Stream message: `[frame_id u64][width u32][height u32][PNG bytes]`, integers little-endian.
pub fn encode_frame_message(frame_id: u64, img: &Image) -> Result<Vec<u8>> {
    let png = imaging::encode_png(img)?;
    let mut out = Vec::with_capacity(16 + png.len());
    out.extend_from_slice(&frame_id.to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&png);
    Ok(out)
}

pub fn decode_frame_message(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < 16 {
        return Err(Error::invalid("frame message shorter than its 16-byte header"));
    }
    let id = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let img = imaging::decode_png(&bytes[16..])?;
    if img.dims() != (h, w) {
        return Err(Error::invalid(format!(
            "frame header says {w}x{h} but the PNG is {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(Frame::new(id, img))
}

/// Shared handle for servers: the engine plus a cache of preview images.
pub struct Service {
    pub engine: Engine,
    previews: RwLock<HashMap<String, Vec<u8>>>,
}

impl Service {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            previews: RwLock::new(HashMap::new()),
        }
    }

    pub fn preview_png(&self, id: &str) -> Option<Vec<u8>> {
        if let Some(p) = self.previews.read().expect("preview lock").get(id) {
            return Some(p.clone());
        }
        let g = self.engine.catalog.get(id)?;
        let rel = g.entry.preview.as_ref()?;
        let bytes = std::fs::read(self.engine.catalog.dir.join(rel)).ok()?;
        self.previews.write().expect("preview lock").insert(id.to_string(), bytes.clone());
        Some(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsnet::ArchConfig;
    use crate::synthetic::capture_frame;
    use crate::video::MemorySource;

    fn probe_garment(id: &str, color: [f32; 3], mask: f32) -> Arc<LoadedGarment> {
        let net = GsNet::constant(&ArchConfig::tiny(Mode::Hybrid), color, mask).unwrap();
        Arc::new(LoadedGarment::from_net(id, net, 32))
    }

    fn engine(garments: Vec<Arc<LoadedGarment>>) -> Engine {
        Engine::new(Catalog::from_garments(garments).unwrap(), Backends::stub(7), EngineConfig::default()).unwrap()
    }

    #[test]
    fn zero_mask_is_identity() {
        let g = probe_garment("off", [0.1, 0.9, 0.1], 0.0);
        let frame = Frame::new(0, capture_frame(0, 10, 1, 96, 128, 0.85).unwrap());
        let r = tryon_frame(&frame, &g, &Backends::stub(7), &EngineConfig::default(), &mut GraceState::default()).unwrap();
        assert!(!r.passthrough);
        assert_eq!(r.output, frame.image);
    }

    #[test]
    fn full_mask_paints_inside_roi_only() {
        let g = probe_garment("on", [0.1, 0.9, 0.1], 1.0);
        let frame = Frame::new(0, capture_frame(0, 10, 1, 96, 128, 0.85).unwrap());
        let r = tryon_frame(&frame, &g, &Backends::stub(7), &EngineConfig::default(), &mut GraceState::default()).unwrap();
        let painted = (0..96 * 128).filter(|i| (r.output.get(1, i / 128, i % 128) - 0.9).abs() < 1e-3).count();
        assert!(painted > 500, "{painted}");
        let untouched = (0..96 * 128).filter(|i| r.output.pixel(i / 128, i % 128) == frame.image.pixel(i / 128, i % 128)).count();
        assert!(untouched > 96 * 128 / 4);
    }

    #[test]
    fn blank_frame_passes_through() {
        let g = probe_garment("on", [0.1, 0.9, 0.1], 1.0);
        let frame = Frame::new(3, Image::zeros(3, 64, 64));
        let r = tryon_frame(&frame, &g, &Backends::stub(7), &EngineConfig::default(), &mut GraceState::default()).unwrap();
        assert!(r.passthrough);
        assert_eq!(r.output, frame.image);
        assert_eq!(r.frame_id, 3);
    }

    #[test]
    fn grace_rule_bridges_five_failures() {
        use crate::perception::{FailOnFrames, StubDensePose};
        let mut b = Backends::stub(7);
        b.densepose = Arc::new(FailOnFrames::new(StubDensePose::new(7), 1..=7));
        let g = probe_garment("on", [0.1, 0.9, 0.1], 1.0);
        let mut grace = GraceState::default();
        let flags: Vec<bool> = (0..9)
            .map(|i| {
                let frame = Frame::new(i, capture_frame(0, 10, 1, 64, 64, 0.85).unwrap());
                tryon_frame(&frame, &g, &b, &EngineConfig::default(), &mut grace).unwrap().passthrough
            })
            .collect();
        assert_eq!(flags, vec![false, false, false, false, false, false, true, true, false]);
    }

    #[test]
    fn session_preserves_order_and_count() {
        let e = engine(vec![probe_garment("a", [0.2, 0.2, 0.8], 1.0)]);
        let frames: Vec<Image> = (0..12).map(|i| capture_frame(i, 12, 1, 64, 64, 0.85).unwrap()).collect();
        let mut ids = Vec::new();
        let s = run_session(&e, &mut MemorySource::new(frames, 30.0), SessionMode::Offline, |r| {
            ids.push(r.frame_id);
            Ok(())
        })
        .unwrap();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
        assert_eq!((s.frames_in, s.frames_out, s.dropped), (12, 12, 0));
    }

    #[test]
    fn selection_schedule() {
        let a = probe_garment("a", [0.2, 0.2, 0.8], 1.0);
        let b = probe_garment("b", [0.8, 0.2, 0.2], 1.0);
        let s = Selection::new(Arc::clone(&a));
        for id in 0..=10 {
            s.ingested(id);
        }
        assert_eq!(s.select(Arc::clone(&b)), 11);
        assert_eq!(s.for_frame(9).entry.garment_id, "a");
        assert_eq!(s.for_frame(10).entry.garment_id, "a");
        assert_eq!(s.for_frame(11).entry.garment_id, "b");
        assert_eq!(s.current().entry.garment_id, "b");
    }

    #[test]
    fn frame_message_round_trip() {
        let img = Image::from_fn(3, 5, 7, |c, y, x| ((c * 31 + y * 7 + x) % 255) as f32 / 255.0);
        let msg = encode_frame_message(42, &img).unwrap();
        assert_eq!(&msg[0..8], &42u64.to_le_bytes());
        assert_eq!(&msg[8..12], &7u32.to_le_bytes());
        let back = decode_frame_message(&msg).unwrap();
        assert_eq!(back.id, 42);
        assert_eq!(back.image, img);
        assert!(decode_frame_message(&msg[..10]).is_err());
        let mut bad = msg.clone();
        bad[8] = 9;
        assert!(decode_frame_message(&bad).is_err());
    }
}
