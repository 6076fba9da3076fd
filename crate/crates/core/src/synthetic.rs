//! Synthetic capture footage: flat-shaded procedural people on a black
//! background, used by tests, demos and the toy training task.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{self, BodyPart, SmplParams};
use crate::dataset::{build_dataset, rewrite_targets, DatasetConfig, DatasetManifest};
use crate::error::Result;
use crate::imaging::{Image, SoftMask};
use crate::perception::{camera_for, Backends, SHIRT_COLOR, SHIRT_STRIPE_COLOR};
use crate::raster::{self, WeakPerspective, NO_FACE};
use crate::video::MemorySource;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersonStyle {
    pub shirt: [f32; 3],
    pub stripe: [f32; 3],
    /// Stripe period along the body, in texels; 0 disables stripes.
    pub stripe_period: f64,
    pub skin: [f32; 3],
    pub hair: [f32; 3],
    pub pants: [f32; 3],
    pub shoes: [f32; 3],
}

impl Default for PersonStyle {
    fn default() -> Self {
        Self {
            shirt: SHIRT_COLOR,
            stripe: SHIRT_STRIPE_COLOR,
            stripe_period: 48.0,
            skin: [0.87, 0.68, 0.55],
            hair: [0.25, 0.17, 0.10],
            pants: [0.18, 0.24, 0.42],
            shoes: [0.30, 0.30, 0.30],
        }
    }
}

impl PersonStyle {
    fn color(&self, part: BodyPart, grid_v: f64, vertex_y: f64, head_top: f64) -> [f32; 3] {
        use BodyPart::*;
        match part {
            Spine | Spine1 | Spine2 | LeftShoulder | RightShoulder | LeftArm | RightArm => {
                if self.stripe_period > 0.0 && (grid_v / self.stripe_period).floor() as i64 % 2 == 1 {
                    self.stripe
                } else {
                    self.shirt
                }
            }
            Head if vertex_y > head_top => self.hair,
            Head | Neck | LeftForeArm | RightForeArm | LeftHand | RightHand => self.skin,
            Hips | LeftUpLeg | RightUpLeg | LeftLeg | RightLeg => self.pants,
            LeftFoot | RightFoot => self.shoes,
        }
    }
}

/// Draw a posed body into `img` (only covered pixels are touched).
pub fn render_person(img: &mut Image, vertices: &[[f64; 3]], camera: &WeakPerspective, style: &PersonStyle) -> Result<()> {
    let t = body::template();
    let (h, w) = img.dims();
    let vis = raster::rasterize(vertices, &t.faces, camera, h, w)?;
    // hair covers the upper part of the head
    let head_ys: Vec<f64> = (0..vertices.len())
        .filter(|&i| t.parts[i] == BodyPart::Head)
        .map(|i| vertices[i][1])
        .collect();
    let (hmin, hmax) = head_ys.iter().fold((f64::MAX, f64::MIN), |a, y| (a.0.min(*y), a.1.max(*y)));
    let head_top = hmin + 0.7 * (hmax - hmin);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let f = vis.face[i];
            if f == NO_FACE {
                continue;
            }
            let face = t.faces[f as usize];
            let b = vis.bary[i];
            let dominant = (0..3).fold(0, |best, k| if b[k] > b[best] { k } else { best });
            let part = t.parts[face[dominant] as usize];
            let mut gv = 0.0;
            let mut vy = 0.0;
            for k in 0..3 {
                gv += b[k] as f64 * t.grid_uv[face[k] as usize][1];
                vy += b[k] as f64 * vertices[face[k] as usize][1];
            }
            let c = style.color(part, gv, vy, head_top);
            for ch in 0..3 {
                img.set(ch, y, x, c[ch]);
            }
        }
    }
    Ok(())
}

/// Body parameters for capture frame `index` of `count`: one full turn about
/// the vertical axis while cycling through a few arm poses.
pub fn capture_params(index: usize, count: usize, seed: u64) -> SmplParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64));
    let mut p = SmplParams::neutral();
    p.betas[0] = 0.3;
    p.betas[1] = -0.2;
    let yaw = 2.0 * std::f64::consts::PI * index as f64 / count.max(1) as f64;
    p.set_joint_rotation(0, [0.0, yaw, 0.0]);
    let arm = -0.5 - 0.6 * ((index % 7) as f64 / 6.0) + rng.gen_range(-0.05..=0.05);
    p.set_joint_rotation(16, [0.0, 0.0, arm]);
    p.set_joint_rotation(17, [0.0, 0.0, -arm]);
    let elbow = rng.gen_range(0.0..=0.4);
    p.set_joint_rotation(18, [0.0, -elbow, 0.0]);
    p.set_joint_rotation(19, [0.0, elbow, 0.0]);
    p
}

/// A single rendered capture frame with the person centered and filling `fill` of the height.
pub fn capture_frame(index: usize, count: usize, seed: u64, height: usize, width: usize, fill: f64) -> Result<Image> {
    let params = capture_params(index, count, seed);
    let verts = body::template().posed_vertices(&params)?;
    let cam = camera_for(&verts, height as f64 * fill, width as f64 / 2.0, height as f64 / 2.0);
    let mut img = Image::zeros(3, height, width);
    render_person(&mut img, &verts, &cam, &PersonStyle::default())?;
    Ok(img)
}

/// A short synthetic capture video.
pub fn capture_video(count: usize, seed: u64, height: usize, width: usize) -> Result<Vec<Image>> {
    (0..count).map(|i| capture_frame(i, count, seed, height, width, 0.85)).collect()
}

/// Two people side by side: a smaller one on the left and a larger one on the right.
pub fn two_person_frame(height: usize, width: usize) -> Result<Image> {
    let params = capture_params(0, 1, 1);
    let verts = body::template().posed_vertices(&params)?;
    let mut img = Image::zeros(3, height, width);
    let small = camera_for(&verts, height as f64 * 0.45, width as f64 * 0.22, height as f64 * 0.5);
    let big = camera_for(&verts, height as f64 * 0.85, width as f64 * 0.68, height as f64 * 0.5);
    render_person(&mut img, &verts, &small, &PersonStyle::default())?;
    render_person(&mut img, &verts, &big, &PersonStyle::default())?;
    Ok(img)
}

/// Foreground threshold on the measurement garment for the toy target mask.
pub const TOY_MASK_THRESHOLD: f32 = 0.05;

/// Toy target: a fixed per-pixel recoloring of the measurement garment, masked
/// to its foreground. Gives the toy training task an analytic ground truth.
pub fn toy_target(vm: &Image) -> (Image, SoftMask) {
    let (h, w) = vm.dims();
    let mask = SoftMask::from_fn(h, w, |y, x| {
        if (0..3).any(|c| vm.get(c, y, x) >= TOY_MASK_THRESHOLD) {
            1.0
        } else {
            0.0
        }
    });
    let garment = Image::from_fn(3, h, w, |c, y, x| {
        if mask.get(y, x) == 0.0 {
            return 0.0;
        }
        let (r, g, b) = (vm.get(0, y, x), vm.get(1, y, x), vm.get(2, y, x));
        match c {
            0 => 0.15 + 0.7 * b,
            1 => 0.8 - 0.6 * r,
            _ => 0.2 + 0.5 * g,
        }
    });
    (garment, mask)
}

/// Settings for the synthetic toy dataset.
#[derive(Debug, Clone)]
pub struct ToyDatasetSpec {
    pub frames: usize,
    pub frame_side: usize,
    pub roi_size: usize,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        Self {
            frames: 60,
            frame_side: 96,
            roi_size: 32,
            seed: 11,
        }
    }
}

/// Build a dataset from a synthetic capture with stub backends, then replace
/// the parsed garments with [`toy_target`] of each record's measurement garment.
pub fn build_toy_dataset(dir: &Path, spec: &ToyDatasetSpec) -> Result<DatasetManifest> {
    let frames = capture_video(spec.frames, spec.seed, spec.frame_side, spec.frame_side)?;
    let mut source = MemorySource::new(frames, 30.0);
    let cfg = DatasetConfig {
        roi_size: spec.roi_size,
        ..DatasetConfig::default()
    };
    build_dataset(&mut source, &Backends::stub(spec.seed), "toy", &cfg, dir)?;
    rewrite_targets(dir, toy_target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capture_is_deterministic_and_nonempty() {
        let a = capture_video(3, 5, 48, 64).unwrap();
        let b = capture_video(3, 5, 48, 64).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.content_hash(), y.content_hash());
            assert!(x.data().iter().any(|v| *v > 0.0));
        }
        assert_ne!(a[0].content_hash(), a[1].content_hash());
    }

    #[test]
    fn shirt_pixels_present() {
        let img = capture_frame(0, 10, 1, 96, 96, 0.85).unwrap();
        let shirt = (0..96 * 96)
            .filter(|i| (0..3).all(|c| img.get(c, i / 96, i % 96) == SHIRT_COLOR[c]))
            .count();
        assert!(shirt > 50, "{shirt}");
    }
}
