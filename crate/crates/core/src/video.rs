//! Video input/output. Supported containers: a directory of PNG frames (sorted
//! by file name) and uncompressed YUV4MPEG2 (`.y4m`).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{self, Image};

pub const DEFAULT_FPS: f64 = 30.0;

pub trait FrameSource: Send {
    fn fps(&self) -> f64;
    /// Next frame, or `None` at end of stream.
    fn next_frame(&mut self) -> Result<Option<Image>>;
}

pub trait FrameSink: Send {
    fn write_frame(&mut self, frame: &Image) -> Result<()>;
    fn finish(self: Box<Self>) -> Result<()>;
}

/// Open a video for reading. `fps` is used for PNG directories, which carry no rate.
pub fn open_source(path: &Path, fps: f64) -> Result<Box<dyn FrameSource>> {
    if path.is_dir() {
        Ok(Box::new(PngDirSource::open(path, fps)?))
    } else if is_y4m(path) {
        Ok(Box::new(Y4mSource::open(path)?))
    } else if !path.exists() {
        Err(Error::invalid(format!("{}: no such file or directory", path.display())))
    } else {
        Err(Error::invalid(format!(
            "{}: unsupported video format (use a directory of PNG frames or a .y4m file)",
            path.display()
        )))
    }
}

/// Create a writer; `.y4m` paths get a Y4M file, anything else a PNG directory.
pub fn create_sink(path: &Path, fps: f64, height: usize, width: usize) -> Result<Box<dyn FrameSink>> {
    if is_y4m(path) {
        Ok(Box::new(Y4mSink::create(path, fps, height, width)?))
    } else {
        Ok(Box::new(PngDirSink::create(path)?))
    }
}

fn is_y4m(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m"))
}

/// Read every frame of a source.
pub fn read_all(source: &mut dyn FrameSource) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    while let Some(f) = source.next_frame()? {
        out.push(f);
    }
    Ok(out)
}

pub struct MemorySource {
    frames: std::vec::IntoIter<Image>,
    fps: f64,
}

impl MemorySource {
    pub fn new(frames: Vec<Image>, fps: f64) -> Self {
        Self {
            frames: frames.into_iter(),
            fps,
        }
    }
}

impl FrameSource for MemorySource {
    fn fps(&self) -> f64 {
        self.fps
    }
    fn next_frame(&mut self) -> Result<Option<Image>> {
        Ok(self.frames.next())
    }
}

pub struct PngDirSource {
    files: std::vec::IntoIter<PathBuf>,
    fps: f64,
}

impl PngDirSource {
    pub fn open(dir: &Path, fps: f64) -> Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        Ok(Self {
            files: files.into_iter(),
            fps,
        })
    }
}

impl FrameSource for PngDirSource {
    fn fps(&self) -> f64 {
        self.fps
    }
    fn next_frame(&mut self) -> Result<Option<Image>> {
        match self.files.next() {
            None => Ok(None),
            Some(p) => {
                let img = imaging::load_png(&p)?;
                Ok(Some(to_rgb(img, &p)?))
            }
        }
    }
}

fn to_rgb(img: Image, path: &Path) -> Result<Image> {
    match img.channels() {
        3 => Ok(img),
        1 => {
            let (h, w) = img.dims();
            let plane = img.plane(0).to_vec();
            let mut data = plane.clone();
            data.extend_from_slice(&plane);
            data.extend_from_slice(&plane);
            Image::from_vec(3, h, w, data)
        }
        c => Err(Error::codec(path, format!("unsupported channel count {c}"))),
    }
}

pub struct PngDirSink {
    dir: PathBuf,
    next: usize,
}

impl PngDirSink {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            next: 0,
        })
    }
}

impl FrameSink for PngDirSink {
    fn write_frame(&mut self, frame: &Image) -> Result<()> {
        imaging::save_png(frame, &self.dir.join(format!("frame_{:06}.png", self.next)))?;
        self.next += 1;
        Ok(())
    }
    fn finish(self: Box<Self>) -> Result<()> {
        Ok(())
    }
}

// BT.601 limited-range YCbCr.
fn rgb_to_ycbcr(r: f32, g: f32, b: f32) -> [u8; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
    let cr = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    let q = |v: f32| v.round().clamp(0.0, 255.0) as u8;
    [q(16.0 + 219.0 * y), q(128.0 + 224.0 * cb), q(128.0 + 224.0 * cr)]
}

fn ycbcr_to_rgb(y: u8, cb: u8, cr: u8) -> [f32; 3] {
    let y = (y as f32 - 16.0) / 219.0;
    let cb = (cb as f32 - 128.0) / 224.0;
    let cr = (cr as f32 - 128.0) / 224.0;
    [
        (y + 1.402 * cr).clamp(0.0, 1.0),
        (y - 0.344_136 * cb - 0.714_136 * cr).clamp(0.0, 1.0),
        (y + 1.772 * cb).clamp(0.0, 1.0),
    ]
}

pub struct Y4mSource {
    decoder: y4m::Decoder<BufReader<File>>,
    path: PathBuf,
    fps: f64,
    /// Chroma subsampling shifts (x, y); `None` for monochrome.
    chroma: Option<(u32, u32)>,
}

fn y4m_err(path: &Path, e: y4m::Error) -> Error {
    Error::codec(path, format!("{e:?}"))
}

impl Y4mSource {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = y4m::decode(BufReader::new(file)).map_err(|e| y4m_err(path, e))?;
        if decoder.get_bit_depth() != 8 {
            return Err(Error::codec(path, "only 8-bit Y4M is supported"));
        }
        use y4m::Colorspace::*;
        let chroma = match decoder.get_colorspace() {
            C444 => Some((0, 0)),
            C422 => Some((1, 0)),
            C420 | C420jpeg | C420paldv | C420mpeg2 => Some((1, 1)),
            Cmono => None,
            other => return Err(Error::codec(path, format!("unsupported Y4M colorspace {other:?}"))),
        };
        let rate = decoder.get_framerate();
        let fps = if rate.den == 0 || rate.num == 0 {
            DEFAULT_FPS
        } else {
            rate.num as f64 / rate.den as f64
        };
        Ok(Self {
            decoder,
            path: path.to_path_buf(),
            fps,
            chroma,
        })
    }
}

impl FrameSource for Y4mSource {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn next_frame(&mut self) -> Result<Option<Image>> {
        let (w, h) = (self.decoder.get_width(), self.decoder.get_height());
        let chroma = self.chroma;
        let frame = match self.decoder.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => return Ok(None),
            Err(e) => return Err(y4m_err(&self.path, e)),
        };
        let yp = frame.get_y_plane();
        let mut img = Image::zeros(3, h, w);
        match chroma {
            None => {
                for y in 0..h {
                    for x in 0..w {
                        let v = ((yp[y * w + x] as f32 - 16.0) / 219.0).clamp(0.0, 1.0);
                        for c in 0..3 {
                            img.set(c, y, x, v);
                        }
                    }
                }
            }
            Some((sx, sy)) => {
                let cw = (w + (1 << sx) - 1) >> sx;
                let (up, vp) = (frame.get_u_plane(), frame.get_v_plane());
                for y in 0..h {
                    for x in 0..w {
                        let ci = (y >> sy) * cw + (x >> sx);
                        let rgb = ycbcr_to_rgb(yp[y * w + x], up[ci], vp[ci]);
                        for c in 0..3 {
                            img.set(c, y, x, rgb[c]);
                        }
                    }
                }
            }
        }
        Ok(Some(img))
    }
}

pub struct Y4mSink {
    encoder: y4m::Encoder<File>,
    path: PathBuf,
    height: usize,
    width: usize,
}

impl Y4mSink {
    pub fn create(path: &Path, fps: f64, height: usize, width: usize) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("bad frame rate {fps}")));
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let rate = y4m::Ratio::new((fps * 1000.0).round() as usize, 1000);
        let encoder = y4m::encode(width, height, rate)
            .with_colorspace(y4m::Colorspace::C444)
            .write_header(file)
            .map_err(|e| y4m_err(path, e))?;
        Ok(Self {
            encoder,
            path: path.to_path_buf(),
            height,
            width,
        })
    }
}

impl FrameSink for Y4mSink {
    fn write_frame(&mut self, frame: &Image) -> Result<()> {
        if frame.channels() != 3 || frame.dims() != (self.height, self.width) {
            return Err(Error::invalid("frame does not match the video dimensions"));
        }
        let n = self.height * self.width;
        let mut planes = [vec![0u8; n], vec![0u8; n], vec![0u8; n]];
        for i in 0..n {
            let (y, x) = (i / self.width, i % self.width);
            let p = rgb_to_ycbcr(frame.get(0, y, x), frame.get(1, y, x), frame.get(2, y, x));
            for c in 0..3 {
                planes[c][i] = p[c];
            }
        }
        let f = y4m::Frame::new([&planes[0], &planes[1], &planes[2]], None);
        self.encoder.write_frame(&f).map_err(|e| y4m_err(&self.path, e))
    }

    fn finish(self: Box<Self>) -> Result<()> {
        // the encoder writes straight to the file; dropping closes it
        Ok(())
    }
}
