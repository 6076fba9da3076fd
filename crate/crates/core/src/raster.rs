//! Z-buffered triangle rasterization under a weak-perspective camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weak-perspective camera: `px = scale * X + tx`, `py = ty - scale * Y`.
/// The eye sits at `Z = CAMERA_Z` looking down `-Z`; larger `Z` is closer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakPerspective {
    /// Pixels per meter.
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

/// Eye position along +Z; geometry at or beyond it is behind the camera.
pub const CAMERA_Z: f64 = 10.0;
const NEAR: f64 = 1e-3;

impl WeakPerspective {
    pub fn new(scale: f64, tx: f64, ty: f64) -> Self {
        Self { scale, tx, ty }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() || !self.tx.is_finite() || !self.ty.is_finite() {
            return Err(Error::invalid(format!("invalid weak-perspective camera {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.scale * p[0] + self.tx, self.ty - self.scale * p[1]]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.scale, self.tx, self.ty]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            scale: self.scale,
            tx: self.tx + dx,
            ty: self.ty + dy,
        }
    }
}

/// Per-pixel visible face and barycentric weights.
#[derive(Debug, Clone)]
pub struct VisibilityBuffer {
    pub height: usize,
    pub width: usize,
    /// `u32::MAX` marks background.
    pub face: Vec<u32>,
    pub bary: Vec<[f32; 3]>,
    depth: Vec<f64>,
}

pub const NO_FACE: u32 = u32::MAX;

impl VisibilityBuffer {
    pub fn covered(&self, y: usize, x: usize) -> bool {
        self.face[y * self.width + x] != NO_FACE
    }

    pub fn coverage(&self) -> usize {
        self.face.iter().filter(|f| **f != NO_FACE).count()
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Rasterize `faces` over `vertices` (world space). Pixel centers inside a triangle
/// (edges inclusive) are covered; the closest surface wins.
pub fn rasterize(
    vertices: &[[f64; 3]],
    faces: &[[u32; 3]],
    camera: &WeakPerspective,
    height: usize,
    width: usize,
) -> Result<VisibilityBuffer> {
    camera.validate()?;
    let mut buf = VisibilityBuffer {
        height,
        width,
        face: vec![NO_FACE; height * width],
        bary: vec![[0.0; 3]; height * width],
        depth: vec![f64::NEG_INFINITY; height * width],
    };
    if height == 0 || width == 0 {
        return Ok(buf);
    }
    let projected: Vec<[f64; 2]> = vertices.iter().map(|v| camera.project(*v)).collect();
    for (fi, f) in faces.iter().enumerate() {
        let idx = [f[0] as usize, f[1] as usize, f[2] as usize];
        if idx.iter().any(|&i| vertices[i][2] >= CAMERA_Z - NEAR) {
            continue;
        }
        let [a, b, c] = [projected[idx[0]], projected[idx[1]], projected[idx[2]]];
        let area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let min_y = a[1].min(b[1]).min(c[1]);
        let max_y = a[1].max(b[1]).max(c[1]);
        // pixel x is sampled at x + 0.5
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let za = vertices[idx[0]][2];
        let zb = vertices[idx[1]][2];
        let zc = vertices[idx[2]][2];
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let w0 = edge(b, c, p) / area;
                let w1 = edge(c, a, p) / area;
                let w2 = edge(a, b, p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * za + w1 * zb + w2 * zc;
                let i = y * width + x;
                if z > buf.depth[i] {
                    buf.depth[i] = z;
                    buf.face[i] = fi as u32;
                    buf.bary[i] = [w0 as f32, w1 as f32, w2 as f32];
                }
            }
        }
    }
    Ok(buf)
}
