//! Measurement garment: the body surface minus head, hands, hips and legs,
//! drawn with a grid texture so the network sees how the cloth should stretch.

use serde::{Deserialize, Serialize};

use crate::body::{self, SmplParams};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::raster::{self, WeakPerspective, NO_FACE};

/// Posed vertices and faces of the retained body parts, with grid coordinates
/// (in texels) for every vertex.
#[derive(Debug, Clone)]
pub struct TrimmedBodyMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub grid_uv: Vec<[f64; 2]>,
}

impl TrimmedBodyMesh {
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            grid_uv: Vec::new(),
        }
    }
}

/// Pose the body and drop the trimmed parts. Only faces whose three vertices
/// all survive are kept; vertices are renumbered compactly.
pub fn trim_smpl(params: &SmplParams) -> Result<TrimmedBodyMesh> {
    let t = body::template();
    let posed = t.posed_vertices(params)?;
    if posed.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("posed body has non-finite vertices"));
    }
    let mut remap = vec![u32::MAX; posed.len()];
    let mut mesh = TrimmedBodyMesh::empty();
    for (i, part) in t.parts.iter().enumerate() {
        if !part.is_trimmed() {
            remap[i] = mesh.vertices.len() as u32;
            mesh.vertices.push(posed[i]);
            mesh.grid_uv.push(t.grid_uv[i]);
        }
    }
    for f in &t.faces {
        let g = [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]];
        if g.iter().all(|&i| i != u32::MAX) {
            mesh.faces.push(g);
        }
    }
    Ok(mesh)
}

/// Regular grid on the body surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTexture {
    /// Grid spacing in texels.
    pub cell_size: f64,
    pub line_width: f64,
    pub line_color: [f32; 3],
    pub fill_color: [f32; 3],
}

impl Default for GridTexture {
    fn default() -> Self {
        Self {
            cell_size: 32.0,
            line_width: 3.0,
            line_color: [0.12, 0.12, 0.45],
            fill_color: [0.92, 0.92, 0.88],
        }
    }
}

impl GridTexture {
    pub fn validate(&self) -> Result<()> {
        if !(self.line_width >= 1.0) || !(self.cell_size > self.line_width) {
            return Err(Error::invalid(format!("bad grid texture {self:?}")));
        }
        let ok = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !ok(&self.line_color) || !ok(&self.fill_color) {
            return Err(Error::invalid("grid colors must be in [0,1]"));
        }
        Ok(())
    }

    pub fn sample(&self, u: f64, v: f64) -> [f32; 3] {
        let on_line = |t: f64| t.rem_euclid(self.cell_size) < self.line_width;
        if on_line(u) || on_line(v) {
            self.line_color
        } else {
            self.fill_color
        }
    }
}

/// Render the trimmed mesh on a black background.
pub fn render_measurement_garment(
    mesh: &TrimmedBodyMesh,
    texture: &GridTexture,
    camera: &WeakPerspective,
    height: usize,
    width: usize,
) -> Result<Image> {
    texture.validate()?;
    let vis = raster::rasterize(&mesh.vertices, &mesh.faces, camera, height, width)?;
    let mut out = Image::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let f = vis.face[i];
            if f == NO_FACE {
                continue;
            }
            let face = mesh.faces[f as usize];
            let w = vis.bary[i];
            let mut uv = [0.0f64; 2];
            for k in 0..3 {
                let g = mesh.grid_uv[face[k] as usize];
                uv[0] += w[k] as f64 * g[0];
                uv[1] += w[k] as f64 * g[1];
            }
            let c = texture.sample(uv[0], uv[1]);
            for (ch, v) in c.iter().enumerate() {
                out.set(ch, y, x, *v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{BodyPart, PartLabelTable};

    fn t_pose() -> SmplParams {
        SmplParams::neutral()
    }

    fn centered_camera(mesh: &TrimmedBodyMesh, h: usize) -> WeakPerspective {
        crate::perception::camera_for(&mesh.vertices, h as f64 * 0.6, h as f64 / 2.0, h as f64 / 2.0)
    }

    #[test]
    fn vertex_count_matches_label_table() {
        let labels = PartLabelTable::bundled().unwrap().labels().unwrap();
        let expected = labels.iter().filter(|p| !p.is_trimmed()).count();
        let mesh = trim_smpl(&t_pose()).unwrap();
        assert_eq!(mesh.vertices.len(), expected);
        assert!(expected > 0 && expected < labels.len());
    }

    #[test]
    fn no_face_touches_a_trimmed_part() {
        let t = body::template();
        let labels = PartLabelTable::bundled().unwrap().labels().unwrap();
        let kept: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_trimmed()).collect();
        let mesh = trim_smpl(&t_pose()).unwrap();
        for f in &mesh.faces {
            for &v in f {
                let original = kept[v as usize];
                assert!(!matches!(labels[original], BodyPart::Head | BodyPart::LeftHand | BodyPart::RightHand));
                assert!(!t.parts[original].is_trimmed());
            }
        }
        // every surviving face of the template is accounted for
        let expected = t
            .faces
            .iter()
            .filter(|f| f.iter().all(|&v| !labels[v as usize].is_trimmed()))
            .count();
        assert_eq!(mesh.faces.len(), expected);
    }

    #[test]
    fn topology_does_not_depend_on_shape() {
        let a = trim_smpl(&t_pose()).unwrap();
        let mut p = t_pose();
        p.betas[0] = 2.0;
        p.betas[1] = -1.5;
        p.set_joint_rotation(16, [0.0, 0.0, -0.8]);
        let b = trim_smpl(&p).unwrap();
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.vertices.len(), b.vertices.len());
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let mut p = t_pose();
        p.thetas[5] = f64::NAN;
        assert!(trim_smpl(&p).is_err());
    }

    #[test]
    fn empty_mesh_renders_black() {
        let img = render_measurement_garment(
            &TrimmedBodyMesh::empty(),
            &GridTexture::default(),
            &WeakPerspective::new(100.0, 32.0, 32.0),
            64,
            64,
        )
        .unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mesh_behind_camera_renders_black() {
        let mut mesh = trim_smpl(&t_pose()).unwrap();
        for v in mesh.vertices.iter_mut() {
            v[2] += 2.0 * raster::CAMERA_Z;
        }
        let cam = centered_camera(&mesh, 64);
        let img = render_measurement_garment(&mesh, &GridTexture::default(), &cam, 64, 64).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
    }

    fn covered(img: &Image) -> Vec<bool> {
        let (h, w) = img.dims();
        (0..h * w).map(|i| img.is_foreground(i / w, i % w, 0.0)).collect()
    }

    #[test]
    fn coverage_is_plausible() {
        let mesh = trim_smpl(&t_pose()).unwrap();
        let cam = centered_camera(&mesh, 128);
        let img = render_measurement_garment(&mesh, &GridTexture::default(), &cam, 128, 128).unwrap();
        let frac = covered(&img).iter().filter(|c| **c).count() as f64 / (128.0 * 128.0);
        assert!((0.05..0.6).contains(&frac), "coverage {frac}");
    }

    fn inside_triangle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> bool {
        // same-side test with cross products, orientation agnostic
        let cross = |o: [f64; 2], s: [f64; 2], q: [f64; 2]| (s[0] - o[0]) * (q[1] - o[1]) - (s[1] - o[1]) * (q[0] - o[0]);
        let d1 = cross(a, b, p);
        let d2 = cross(b, c, p);
        let d3 = cross(c, a, p);
        let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
        let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
        !(neg && pos)
    }

    #[test]
    fn silhouette_matches_point_in_triangle_oracle() {
        let mut p = t_pose();
        p.set_joint_rotation(16, [0.0, 0.0, -0.7]);
        p.set_joint_rotation(17, [0.0, 0.0, 0.7]);
        let mesh = trim_smpl(&p).unwrap();
        let (h, w) = (64usize, 64usize);
        let cam = centered_camera(&mesh, h);
        let img = render_measurement_garment(&mesh, &GridTexture::default(), &cam, h, w).unwrap();
        let got = covered(&img);
        let proj: Vec<[f64; 2]> = mesh.vertices.iter().map(|v| cam.project(*v)).collect();
        let mut oracle = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let q = [x as f64 + 0.5, y as f64 + 0.5];
                oracle[y * w + x] = mesh.faces.iter().any(|f| {
                    inside_triangle(proj[f[0] as usize], proj[f[1] as usize], proj[f[2] as usize], q)
                });
            }
        }
        // each disagreement must lie within 2 px of an oracle boundary pixel
        let near_boundary = |y: usize, x: usize| {
            let v = oracle[y * w + x];
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let ny = y as i64 + dy;
                    let nx = x as i64 + dx;
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && oracle[ny as usize * w + nx as usize] != v {
                        return true;
                    }
                }
            }
            false
        };
        for y in 0..h {
            for x in 0..w {
                if got[y * w + x] != oracle[y * w + x] {
                    assert!(near_boundary(y, x), "mismatch far from boundary at ({y},{x})");
                }
            }
        }
    }

    #[test]
    fn integer_camera_shift_shifts_image() {
        let mesh = trim_smpl(&t_pose()).unwrap();
        let cam = centered_camera(&mesh, 64);
        let tex = GridTexture::default();
        let a = render_measurement_garment(&mesh, &tex, &cam, 64, 64).unwrap();
        let b = render_measurement_garment(&mesh, &tex, &cam.translated(3.0, -2.0), 64, 64).unwrap();
        for y in 2..62 {
            for x in 0..61 {
                for c in 0..3 {
                    assert_eq!(a.get(c, y, x), b.get(c, y - 2, x + 3));
                }
            }
        }
    }

    #[test]
    fn output_stays_inside_projected_bbox() {
        let mesh = trim_smpl(&t_pose()).unwrap();
        let cam = centered_camera(&mesh, 96);
        let img = render_measurement_garment(&mesh, &GridTexture::default(), &cam, 96, 96).unwrap();
        let proj: Vec<[f64; 2]> = mesh.vertices.iter().map(|v| cam.project(*v)).collect();
        let (x0, x1) = proj.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[0]), a.1.max(p[0])));
        let (y0, y1) = proj.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
        for y in 0..96 {
            for x in 0..96 {
                if img.is_foreground(y, x, 0.0) {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    assert!(px >= x0 - 1.0 && px <= x1 + 1.0 && py >= y0 - 1.0 && py <= y1 + 1.0);
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mesh = trim_smpl(&t_pose()).unwrap();
        let cam = centered_camera(&mesh, 48);
        let a = render_measurement_garment(&mesh, &GridTexture::default(), &cam, 48, 48).unwrap();
        let b = render_measurement_garment(&mesh, &GridTexture::default(), &cam, 48, 48).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
