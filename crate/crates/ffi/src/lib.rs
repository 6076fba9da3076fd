//! C interface to the try-on engine.
//!
//! Every function returns a [`TryonStatus`]; on failure a message is kept per
//! thread and can be read with [`tryon_last_error`]. Handles are opaque and
//! must be released with their `_free` function. Images cross the boundary as
//! tightly packed 8-bit RGB, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use tryon::engine::{tryon_frame, Catalog, Engine, EngineConfig, GraceState};
use tryon::imaging::Image;
use tryon::perception::{Backends, Frame, PerceptionConfig};
use tryon::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TryonStatus {
    Ok = 0,
    /// bad arguments or unreadable input data
    InvalidInput = 1,
    /// bad configuration, unknown garment, unloadable catalog
    Config = 2,
    /// a perception backend is missing or failed
    Backend = 3,
    /// a required pointer was null
    NullPointer = 4,
    /// caller-supplied buffer too small
    BufferTooSmall = 5,
    /// internal panic; the handle should be discarded
    Internal = 6,
}

/// Per-frame outcome filled by [`tryon_engine_process_rgb8`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TryonFrameInfo {
    pub frame_id: u64,
    /// 1 when the frame was returned unchanged
    pub passthrough: u8,
    pub pose_ms: f64,
    pub densepose_ms: f64,
    pub gs_ms: f64,
    pub composite_ms: f64,
}

/// Opaque engine handle.
pub struct TryonEngine {
    engine: Engine,
    grace: Mutex<GraceState>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TryonStatus {
    match e.exit_code() {
        2 => TryonStatus::Config,
        3 => TryonStatus::Backend,
        _ => TryonStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TryonStatus, String)>) -> TryonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TryonStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TryonStatus::Internal
        }
    }
}

fn fail(e: Error) -> (TryonStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TryonStatus, String) {
    (TryonStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (TryonStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TryonStatus::InvalidInput, format!("{what} is not UTF-8")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OpenConfig {
    engine: EngineConfig,
    perception: PerceptionConfig,
}

unsafe fn open(catalog: Catalog, config_json: *const c_char, out: *mut *mut TryonEngine) -> Result<(), (TryonStatus, String)> {
    let cfg: OpenConfig = if config_json.is_null() {
        OpenConfig::default()
    } else {
        let text = str_arg(config_json, "config_json")?;
        serde_json::from_str(text).map_err(|e| (TryonStatus::Config, format!("config_json: {e}")))?
    };
    let backends = Backends::from_config(&cfg.perception).map_err(fail)?;
    backends.probe(false).map_err(fail)?;
    let engine = Engine::new(catalog, backends, cfg.engine).map_err(fail)?;
    *out = Box::into_raw(Box::new(TryonEngine {
        engine,
        grace: Mutex::new(GraceState::default()),
    }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tryon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tryon_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Open an engine over a catalog directory. `config_json` may be null or a
/// JSON object with optional `engine` and `perception` sections.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_open(
    catalog_dir: *const c_char,
    config_json: *const c_char,
    out: *mut *mut TryonEngine,
) -> TryonStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = str_arg(catalog_dir, "catalog_dir")?;
        let catalog = Catalog::load(Path::new(dir)).map_err(fail)?;
        open(catalog, config_json, out)
    })
}

/// Open an engine with a single garment loaded from a checkpoint file; the
/// garment id is the file stem.
///
/// # Safety
/// As [`tryon_engine_open`].
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_open_checkpoint(
    checkpoint: *const c_char,
    config_json: *const c_char,
    out: *mut *mut TryonEngine,
) -> TryonStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(checkpoint, "checkpoint")?;
        let catalog = Catalog::from_checkpoint(Path::new(path)).map_err(fail)?;
        open(catalog, config_json, out)
    })
}

/// Release an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from an open call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_free(engine: *mut TryonEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of garments in the catalog.
///
/// # Safety
/// `engine` must be a live handle; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_garment_count(engine: *const TryonEngine, count: *mut usize) -> TryonStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let c = count.as_mut().ok_or_else(|| null("count"))?;
        *c = e.engine.catalog.entries().len();
        Ok(())
    })
}

fn copy_str(s: &str, buf: *mut c_char, len: usize) -> Result<(), (TryonStatus, String)> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    let bytes = s.as_bytes();
    if bytes.len() + 1 > len {
        return Err((TryonStatus::BufferTooSmall, format!("need {} bytes", bytes.len() + 1)));
    }
    // SAFETY: caller promised `len` writable bytes
    unsafe {
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
    }
    Ok(())
}

/// Copy the id of garment `index` into `buf` (NUL-terminated).
///
/// # Safety
/// `engine` must be live; `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_garment_id(
    engine: *const TryonEngine,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> TryonStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let entries = e.engine.catalog.entries();
        let entry = entries
            .get(index)
            .ok_or_else(|| (TryonStatus::InvalidInput, format!("garment index {index} out of range")))?;
        copy_str(&entry.garment_id, buf, buf_len)
    })
}

/// Copy the selected garment id into `buf`.
///
/// # Safety
/// As [`tryon_engine_garment_id`].
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_selected(engine: *const TryonEngine, buf: *mut c_char, buf_len: usize) -> TryonStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        copy_str(&e.engine.selection.current().entry.garment_id, buf, buf_len)
    })
}

/// Switch garments; applies from the next processed frame.
///
/// # Safety
/// `engine` live, `garment_id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_select(engine: *const TryonEngine, garment_id: *const c_char) -> TryonStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        let id = str_arg(garment_id, "garment_id")?;
        e.engine.select(id).map(|_| ()).map_err(fail)
    })
}

/// Run try-on on one RGB8 frame. `rgb_out` receives the composited frame
/// and may alias `rgb_in`; both hold `width * height * 3` bytes. `info` may
/// be null.
///
/// # Safety
/// Buffers must be valid for the stated sizes; `engine` must be live.
#[no_mangle]
pub unsafe extern "C" fn tryon_engine_process_rgb8(
    engine: *const TryonEngine,
    frame_id: u64,
    width: u32,
    height: u32,
    rgb_in: *const u8,
    rgb_out: *mut u8,
    info: *mut TryonFrameInfo,
) -> TryonStatus {
    guard(|| {
        let e = engine.as_ref().ok_or_else(|| null("engine"))?;
        if rgb_in.is_null() {
            return Err(null("rgb_in"));
        }
        if rgb_out.is_null() {
            return Err(null("rgb_out"));
        }
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return Err((TryonStatus::InvalidInput, "empty frame".into()));
        }
        let n = w * h * 3;
        let input = std::slice::from_raw_parts(rgb_in, n).to_vec();
        let img = Image::from_interleaved_u8(3, h, w, &input).map_err(fail)?;
        let garment = e.engine.selection.current();
        let mut grace = e.grace.lock().unwrap_or_else(|p| p.into_inner());
        let r = tryon_frame(&Frame::new(frame_id, img), &garment, &e.engine.backends, &e.engine.config, &mut grace)
            .map_err(fail)?;
        let bytes = if r.passthrough { input } else { r.output.to_interleaved_u8() };
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), rgb_out, n);
        if let Some(i) = info.as_mut() {
            *i = TryonFrameInfo {
                frame_id,
                passthrough: r.passthrough as u8,
                pose_ms: r.latency.pose_ms,
                densepose_ms: r.latency.densepose_ms,
                gs_ms: r.latency.gs_ms,
                composite_ms: r.latency.composite_ms,
            };
        }
        Ok(())
    })
}
