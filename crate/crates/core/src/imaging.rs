//! Raster types and the handful of geometric transforms the pipeline needs.
//!
//! Pixels are stored channel-major (`c * h * w + y * w + x`) as `f32` in
//! `[0, 1]`. Continuous coordinates place pixel `i` at the interval
//! `[i, i + 1)`, so its center sits at `i + 0.5`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// A zero-channel image; the identity element of [`concat_channels`].
    pub fn empty(height: usize, width: usize) -> Self {
        Self::zeros(0, height, width)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: &[f32]) -> Self {
        assert_eq!(value.len(), channels);
        let mut img = Self::zeros(channels, height, width);
        for (c, v) in value.iter().enumerate() {
            img.plane_mut(c).fill(*v);
        }
        img
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Interleaved 8-bit RGB (or gray/RGBA) to a normalized image.
    pub fn from_interleaved_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "interleaved buffer has {} bytes, expected {}",
                bytes.len(),
                channels * height * width
            )));
        }
        let mut img = Self::zeros(channels, height, width);
        let plane = height * width;
        for (i, px) in bytes.chunks_exact(channels.max(1)).enumerate() {
            for (c, b) in px.iter().enumerate() {
                img.data[c * plane + i] = *b as f32 / 255.0;
            }
        }
        Ok(img)
    }

    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                out.push(quantize(self.data[c * plane + i]));
            }
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of channels `start..start + count`.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Image> {
        if start + count > self.channels {
            return Err(Error::invalid(format!(
                "channel range {start}..{} exceeds {} channels",
                start + count,
                self.channels
            )));
        }
        let n = self.height * self.width;
        Ok(Image {
            channels: count,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + count) * n].to_vec(),
        })
    }

    /// ITU-R BT.601 luma for 3-channel input; single-channel input is returned as is.
    pub fn luma(&self) -> Result<Image> {
        match self.channels {
            1 => Ok(self.clone()),
            3 | 4 => {
                let n = self.height * self.width;
                let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
                let data = (0..n)
                    .map(|i| (0.299 * r[i] as f64 + 0.587 * g[i] as f64 + 0.114 * b[i] as f64) as f32)
                    .collect();
                Ok(Image {
                    channels: 1,
                    height: self.height,
                    width: self.width,
                    data,
                })
            }
            c => Err(Error::invalid(format!("luma needs 1, 3 or 4 channels, got {c}"))),
        }
    }

    /// Bit-level fingerprint used for determinism checks and fault injection.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.channels as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update((self.width as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn is_foreground(&self, y: usize, x: usize, threshold: f32) -> bool {
        (0..self.channels).any(|c| self.get(c, y, x) > threshold)
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SoftMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Self {
            height,
            width,
            data: vec![v.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self { height, width, data }
    }

    /// Interpret a single-channel image as a mask.
    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::invalid(format!(
                "mask image must have 1 channel, got {}",
                img.channels()
            )));
        }
        Ok(Self {
            height: img.height(),
            width: img.width(),
            data: img.data().to_vec(),
        })
    }

    pub fn to_image(&self) -> Image {
        Image {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn binarized(&self, threshold: f32) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| if *v >= threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum()
    }
}

/// Resampling kernel. Images use bilinear; masks and DensePose planes use nearest
/// so that part indices never blend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Bilinear,
}

#[derive(Clone, Copy)]
enum Edge {
    Zero,
    Clamp,
}

#[inline]
fn sample(img: &Image, c: usize, x: f64, y: f64, interp: Interp, edge: Edge) -> f32 {
    let (h, w) = (img.height as isize, img.width as isize);
    let fetch = |xi: isize, yi: isize| -> f64 {
        match edge {
            Edge::Zero => {
                if xi < 0 || yi < 0 || xi >= w || yi >= h {
                    0.0
                } else {
                    img.get(c, yi as usize, xi as usize) as f64
                }
            }
            Edge::Clamp => {
                let xi = xi.clamp(0, w - 1);
                let yi = yi.clamp(0, h - 1);
                img.get(c, yi as usize, xi as usize) as f64
            }
        }
    };
    match interp {
        Interp::Nearest => fetch(x.floor() as isize, y.floor() as isize) as f32,
        Interp::Bilinear => {
            let fx = x - 0.5;
            let fy = y - 0.5;
            let x0 = fx.floor();
            let y0 = fy.floor();
            let wx = fx - x0;
            let wy = fy - y0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            let mut v = fetch(xi, yi) * (1.0 - wx) * (1.0 - wy);
            if wx != 0.0 {
                v += fetch(xi + 1, yi) * wx * (1.0 - wy);
            }
            if wy != 0.0 {
                v += fetch(xi, yi + 1) * (1.0 - wx) * wy;
                if wx != 0.0 {
                    v += fetch(xi + 1, yi + 1) * wx * wy;
                }
            }
            v.clamp(0.0, 1.0) as f32
        }
    }
}

/// Row-major 2x3 affine matrix `[[a, b, tx], [c, d, ty]]` over continuous pixel coordinates.
pub type Affine2 = [[f64; 3]; 2];

pub const IDENTITY_AFFINE: Affine2 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

fn affine_apply(m: &Affine2, x: f64, y: f64) -> (f64, f64) {
    (
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
    )
}

fn affine_invert(m: &Affine2) -> Result<Affine2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 || !det.is_finite() {
        return Err(Error::invalid("singular affine matrix"));
    }
    let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
    Ok([
        [a, b, -(a * m[0][2] + b * m[1][2])],
        [c, d, -(c * m[0][2] + d * m[1][2])],
    ])
}

/// Square crop of side `source_side` centered at `(center_x, center_y)`, resampled
/// to `target_side`. The crop origin snaps to the pixel grid so that equal-side
/// crops are pure copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTransform {
    pub center_x: f64,
    pub center_y: f64,
    pub source_side: f64,
    pub target_side: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine_jitter: Option<Affine2>,
}

impl RoiTransform {
    pub fn new(center_x: f64, center_y: f64, source_side: f64, target_side: usize) -> Self {
        Self {
            center_x,
            center_y,
            source_side,
            target_side,
            affine_jitter: None,
        }
    }

    /// Square ROI covering a whole square image.
    pub fn full(side: usize) -> Self {
        Self::new(side as f64 / 2.0, side as f64 / 2.0, side as f64, side)
    }

    /// Square ROI around a pixel bounding box `(x0, y0, x1, y1)` (inclusive),
    /// enlarged by `padding` (0.15 = 15%).
    pub fn around_box(bbox: BoundingBox, padding: f64, target_side: usize) -> Self {
        let w = (bbox.x1 - bbox.x0 + 1) as f64;
        let h = (bbox.y1 - bbox.y0 + 1) as f64;
        let side = (w.max(h) * (1.0 + padding)).round().max(1.0);
        let cx = (bbox.x0 + bbox.x1 + 1) as f64 / 2.0;
        let cy = (bbox.y0 + bbox.y1 + 1) as f64 / 2.0;
        Self::new(cx, cy, side, target_side)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_side == 0 || !(self.source_side > 0.0) || !self.source_side.is_finite() {
            return Err(Error::invalid(format!(
                "zero-area ROI (source side {}, target side {})",
                self.source_side, self.target_side
            )));
        }
        if !self.center_x.is_finite() || !self.center_y.is_finite() {
            return Err(Error::invalid("ROI center is not finite"));
        }
        Ok(())
    }

    /// Top-left corner of the source square, snapped to the pixel grid.
    pub fn origin(&self) -> (f64, f64) {
        (
            (self.center_x - self.source_side / 2.0).round(),
            (self.center_y - self.source_side / 2.0).round(),
        )
    }

    fn scale(&self) -> f64 {
        self.source_side / self.target_side as f64
    }

    /// Source-space coordinate of a target-space point.
    pub fn to_source(&self, u: f64, v: f64) -> (f64, f64) {
        let (x0, y0) = self.origin();
        let s = self.scale();
        (x0 + u * s, y0 + v * s)
    }

    /// Target-space coordinate of a source-space point.
    pub fn to_target(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, y0) = self.origin();
        let s = self.scale();
        ((x - x0) / s, (y - y0) / s)
    }

    /// Source-space pixel rectangle `[x0, x1) x [y0, y1)` covered by the ROI square.
    pub fn source_rect(&self) -> (f64, f64, f64, f64) {
        let (x0, y0) = self.origin();
        (x0, y0, x0 + self.source_side, y0 + self.source_side)
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn singleton(x: usize, y: usize) -> Self {
        Self { x0: x, y0: y, x1: x, y1: y }
    }

    pub fn include(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn touches_border(&self, height: usize, width: usize) -> bool {
        self.x0 == 0 || self.y0 == 0 || self.x1 + 1 >= width || self.y1 + 1 >= height
    }
}

/// Channel-wise concatenation: `a`'s channels first, then `b`'s.
pub fn concat_channels(a: &Image, b: &Image) -> Result<Image> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "cannot concatenate {}x{} with {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Image {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    })
}

/// Crop the ROI square out of `img` and resample it to `target_side`. Areas outside
/// the source image are zero. A jitter matrix, when present, is applied afterwards
/// in target space.
pub fn roi_extract(img: &Image, roi: &RoiTransform, interp: Interp) -> Result<Image> {
    roi.validate()?;
    if img.height == 0 || img.width == 0 {
        return Err(Error::invalid("cannot crop an empty image"));
    }
    let t = roi.target_side;
    let mut out = Image::zeros(img.channels, t, t);
    for y in 0..t {
        for x in 0..t {
            let (sx, sy) = roi.to_source(x as f64 + 0.5, y as f64 + 0.5);
            for c in 0..img.channels {
                out.set(c, y, x, sample(img, c, sx, sy, interp, Edge::Zero));
            }
        }
    }
    match &roi.affine_jitter {
        Some(m) => apply_affine(&out, m, interp),
        None => Ok(out),
    }
}

/// Crop a mask; always nearest-neighbor.
pub fn roi_extract_mask(mask: &SoftMask, roi: &RoiTransform) -> Result<SoftMask> {
    SoftMask::from_image(&roi_extract(&mask.to_image(), roi, Interp::Nearest)?)
}

/// Paste an ROI-space image back onto a `canvas_h x canvas_w` canvas. Pixels outside
/// the ROI square are zero.
pub fn roi_inverse(
    img: &Image,
    roi: &RoiTransform,
    canvas_h: usize,
    canvas_w: usize,
    interp: Interp,
) -> Result<Image> {
    roi.validate()?;
    if roi.affine_jitter.is_some() {
        return Err(Error::invalid("jittered ROI transforms are not invertible"));
    }
    if img.height != roi.target_side || img.width != roi.target_side {
        return Err(Error::invalid(format!(
            "ROI image is {}x{}, transform expects {}x{}",
            img.height, img.width, roi.target_side, roi.target_side
        )));
    }
    let t = roi.target_side as f64;
    let mut out = Image::zeros(img.channels, canvas_h, canvas_w);
    let (rx0, ry0, rx1, ry1) = roi.source_rect();
    let ys = (ry0.max(0.0) as usize)..(ry1.max(0.0).ceil() as usize).min(canvas_h);
    let xs = (rx0.max(0.0) as usize)..(rx1.max(0.0).ceil() as usize).min(canvas_w);
    for y in ys {
        for x in xs.clone() {
            let (u, v) = roi.to_target(x as f64 + 0.5, y as f64 + 0.5);
            if !(0.0..t).contains(&u) || !(0.0..t).contains(&v) {
                continue;
            }
            for c in 0..img.channels {
                out.set(c, y, x, sample(img, c, u, v, interp, Edge::Clamp));
            }
        }
    }
    Ok(out)
}

pub fn roi_inverse_mask(mask: &SoftMask, roi: &RoiTransform, canvas_h: usize, canvas_w: usize) -> Result<SoftMask> {
    SoftMask::from_image(&roi_inverse(&mask.to_image(), roi, canvas_h, canvas_w, Interp::Nearest)?)
}

/// Warp `img` by the forward affine `m` (output = input ∘ m⁻¹). Out-of-bounds is zero.
pub fn apply_affine(img: &Image, m: &Affine2, interp: Interp) -> Result<Image> {
    if *m == IDENTITY_AFFINE {
        return Ok(img.clone());
    }
    let inv = affine_invert(m)?;
    let mut out = Image::zeros(img.channels, img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = affine_apply(&inv, x as f64 + 0.5, y as f64 + 0.5);
            for c in 0..img.channels {
                out.set(c, y, x, sample(img, c, sx, sy, interp, Edge::Zero));
            }
        }
    }
    Ok(out)
}

/// Bounds for random augmentation. Translation and scale are fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    pub max_translate: f64,
    pub max_rotate_deg: f64,
    pub max_scale: f64,
}

impl Default for JitterRanges {
    fn default() -> Self {
        Self {
            max_translate: 0.05,
            max_rotate_deg: 3.0,
            max_scale: 0.05,
        }
    }
}

impl JitterRanges {
    pub const NONE: JitterRanges = JitterRanges {
        max_translate: 0.0,
        max_rotate_deg: 0.0,
        max_scale: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=0.5).contains(&self.max_translate)
            && (0.0..=180.0).contains(&self.max_rotate_deg)
            && (0.0..0.9).contains(&self.max_scale);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("jitter ranges out of bounds: {self:?}")))
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineJitter {
    pub translate_x: f64,
    pub translate_y: f64,
    pub rotate_deg: f64,
    pub scale: f64,
}

impl AffineJitter {
    pub fn sample(ranges: &JitterRanges, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let translate_x = sym(ranges.max_translate);
        let translate_y = sym(ranges.max_translate);
        let rotate_deg = sym(ranges.max_rotate_deg);
        let scale = 1.0 + sym(ranges.max_scale);
        Self {
            translate_x,
            translate_y,
            rotate_deg,
            scale,
        }
    }

    /// Forward matrix for an `h x w` image: scale and rotate about the center, then translate.
    pub fn matrix(&self, height: usize, width: usize) -> Affine2 {
        if self.translate_x == 0.0 && self.translate_y == 0.0 && self.rotate_deg == 0.0 && self.scale == 1.0 {
            return IDENTITY_AFFINE;
        }
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let (s, c) = self.rotate_deg.to_radians().sin_cos();
        let (a, b) = (self.scale * c, -self.scale * s);
        let (d, e) = (self.scale * s, self.scale * c);
        let tx = cx + self.translate_x * width as f64 - (a * cx + b * cy);
        let ty = cy + self.translate_y * height as f64 - (d * cx + e * cy);
        [[a, b, tx], [d, e, ty]]
    }
}

/// Seeded random affine augmentation. Every image of a training pair must be warped
/// with the same seed to receive the same transform.
pub fn random_affine(img: &Image, ranges: &JitterRanges, seed: u64, interp: Interp) -> Result<Image> {
    ranges.validate()?;
    let jitter = AffineJitter::sample(ranges, seed);
    apply_affine(img, &jitter.matrix(img.height, img.width), interp)
}

/// Alpha blend `input ⊙ (1 − mask) + garment ⊙ mask`.
pub fn composite(input: &Image, garment: &Image, mask: &SoftMask) -> Result<Image> {
    if input.dims() != garment.dims() || input.dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "composite dimension mismatch: input {:?}, garment {:?}, mask {:?}",
            input.dims(),
            garment.dims(),
            mask.dims()
        )));
    }
    if input.channels != 3 || garment.channels != 3 {
        return Err(Error::invalid(format!(
            "composite expects 3-channel input and garment, got {} and {}",
            input.channels, garment.channels
        )));
    }
    let n = input.height * input.width;
    let mut out = input.clone();
    for c in 0..3 {
        let dst = &mut out.data[c * n..(c + 1) * n];
        let g = &garment.data[c * n..(c + 1) * n];
        for i in 0..n {
            let m = mask.data[i];
            dst[i] = dst[i] * (1.0 - m) + g[i] * m;
        }
    }
    Ok(out)
}

/// Bilinear resize with pixel-center alignment.
pub fn resize(img: &Image, height: usize, width: usize) -> Image {
    if img.dims() == (height, width) {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let mut out = Image::zeros(img.channels, height, width);
    for y in 0..height {
        for x in 0..width {
            let fx = (x as f64 + 0.5) * sx;
            let fy = (y as f64 + 0.5) * sy;
            for c in 0..img.channels {
                out.set(c, y, x, sample(img, c, fx, fy, Interp::Bilinear, Edge::Clamp));
            }
        }
    }
    out
}

pub fn resize_nearest(img: &Image, height: usize, width: usize) -> Image {
    if img.dims() == (height, width) {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    Image::from_fn(img.channels, height, width, |c, y, x| {
        sample(img, c, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy, Interp::Nearest, Edge::Clamp)
    })
}

// --- PNG persistence ---------------------------------------------------------

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    use image::{ExtendedColorType, ImageEncoder};
    let color = match img.channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        4 => ExtendedColorType::Rgba8,
        c => return Err(Error::invalid(format!("PNG supports 1, 3 or 4 channels, got {c}"))),
    };
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&img.to_interleaved_u8(), img.width as u32, img.height as u32, color)
        .map_err(|e| Error::codec("<memory>", e.to_string()))?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::codec("<memory>", e.to_string()))?;
    from_dynamic(dynimg)
}

fn from_dynamic(dynimg: image::DynamicImage) -> Result<Image> {
    use image::DynamicImage::*;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        ImageLuma8(buf) => Image::from_interleaved_u8(1, h, w, buf.as_raw()),
        ImageRgba8(buf) => Image::from_interleaved_u8(4, h, w, buf.as_raw()),
        other => Image::from_interleaved_u8(3, h, w, other.to_rgb8().as_raw()),
    }
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes = encode_png(img).map_err(|e| match e {
        Error::Codec { message, .. } => Error::codec(path, message),
        other => other,
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Codec { message, .. } => Error::codec(path, message),
        other => other,
    })
}

pub fn save_mask_png(mask: &SoftMask, path: &Path) -> Result<()> {
    save_png(&mask.to_image(), path)
}

pub fn load_mask_png(path: &Path) -> Result<SoftMask> {
    let img = load_png(path)?;
    let img = if img.channels() == 1 { img } else { img.luma()? };
    SoftMask::from_image(&img)
}

/// 6-channel tensors persist as `<stem>_vm.png` (channels 0..3) and `<stem>_sdp.png` (3..6).
pub fn save_six_channel(img: &Image, dir: &Path, stem: &str) -> Result<()> {
    if img.channels() != 6 {
        return Err(Error::invalid(format!("expected 6 channels, got {}", img.channels())));
    }
    save_png(&img.select_channels(0, 3)?, &dir.join(format!("{stem}_vm.png")))?;
    save_png(&img.select_channels(3, 3)?, &dir.join(format!("{stem}_sdp.png")))
}

pub fn load_six_channel(dir: &Path, stem: &str) -> Result<Image> {
    let vm = load_png(&dir.join(format!("{stem}_vm.png")))?;
    let sdp = load_png(&dir.join(format!("{stem}_sdp.png")))?;
    concat_channels(&vm, &sdp)
}
