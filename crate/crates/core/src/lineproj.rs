//! Virtual cameras, object-space feature lines and hidden-line rasterization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{SeedPoint, TriMesh, Vec3};

pub const IMAGE_SIZE: usize = 200;
pub const ELEVATION_DEG: f64 = 30.0;
pub const FOV_Y_DEG: f64 = 35.0;
/// Fraction of the frame height covered by the unit bounding sphere.
pub const FRAME_FILL: f64 = 0.95;
pub const DEPTH_BIAS: f64 = 1e-3;
pub const DEFAULT_SHARP_DEG: f64 = 40.0;
/// Depth range half-width around the target, in model units.
const DEPTH_MARGIN: f64 = 1.25;
/// Line samples per output pixel of projected length.
const SAMPLES_PER_PX: f64 = 4.0;

pub type Segment = [Vec3; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub view_index: usize,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

/// Point in camera space: pixel coordinates (continuous, pixel `i` spans
/// `[i, i + 1)`) plus distance along the viewing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Camera {
    /// Camera orbiting the origin at `azimuth_deg` around +Y.
    pub fn orbit(view_index: usize, azimuth_deg: f64, elevation_deg: f64) -> Camera {
        let fov_y = FOV_Y_DEG.to_radians();
        let half = (FRAME_FILL * (fov_y / 2.0).tan()).atan();
        let dist = 1.0 / half.sin();
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = [
            dist * el.cos() * az.sin(),
            dist * el.sin(),
            dist * el.cos() * az.cos(),
        ];
        Camera {
            view_index,
            eye,
            target: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_y,
            near: dist - DEPTH_MARGIN,
            far: dist + DEPTH_MARGIN,
        }
    }

    pub fn azimuth_deg(&self) -> f64 {
        let d = Vec3::from(self.eye) - Vec3::from(self.target);
        d.x.atan2(d.z).to_degrees().rem_euclid(360.0)
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let eye = Vec3::from(self.eye);
        let fwd = (Vec3::from(self.target) - eye).normalize();
        let up_world = Vec3::from(self.up);
        let mut right = fwd.cross(&up_world);
        if right.norm() < 1e-12 {
            right = fwd.cross(&Vec3::new(0.0, 0.0, 1.0));
        }
        let right = right.normalize();
        let up = right.cross(&fwd);
        (right, up, fwd)
    }

    pub fn projector(&self, size: usize) -> Projector {
        let (right, up, fwd) = self.basis();
        Projector {
            eye: Vec3::from(self.eye),
            right,
            up,
            fwd,
            tan_half: (self.fov_y / 2.0).tan(),
            size: size as f64,
            near: self.near,
            far: self.far,
        }
    }
}

/// Precomputed view transform for one image resolution.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    eye: Vec3,
    right: Vec3,
    up: Vec3,
    fwd: Vec3,
    tan_half: f64,
    size: f64,
    near: f64,
    far: f64,
}

impl Projector {
    pub fn project(&self, p: &Vec3) -> ScreenPoint {
        let d = p - self.eye;
        let z = d.dot(&self.fwd);
        let nx = d.dot(&self.right) / (z * self.tan_half);
        let ny = d.dot(&self.up) / (z * self.tan_half);
        ScreenPoint {
            x: (nx + 1.0) * 0.5 * self.size,
            y: (1.0 - ny) * 0.5 * self.size,
            z,
        }
    }

    pub fn normalized_depth(&self, z: f64) -> f64 {
        (z - self.near) / (self.far - self.near)
    }

    pub fn eye(&self) -> Vec3 {
        self.eye
    }

    /// World-space length of one pixel at camera distance `z`.
    pub fn pixel_footprint(&self, z: f64) -> f64 {
        2.0 * self.tan_half * z / self.size
    }
}

/// `p` cameras circling the object every `360/p` degrees, 30° above ground.
pub fn make_cameras(p: usize) -> Vec<Camera> {
    (0..p)
        .map(|k| Camera::orbit(k, k as f64 * 360.0 / p as f64, ELEVATION_DEG))
        .collect()
}

/// Sharp interior edges, boundary edges and non-manifold edges.
pub fn extract_feature_lines(mesh: &TriMesh, sharp_threshold: f64) -> Vec<Segment> {
    let verts = mesh.vertices();
    mesh.edges()
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            e.faces.len() != 2
                || mesh
                    .dihedral_angle(*i)
                    .map(|a| a > sharp_threshold)
                    .unwrap_or(false)
        })
        .map(|(_, e)| [verts[e.v[0]], verts[e.v[1]]])
        .collect()
}

/// Edges separating a front-facing from a back-facing face as seen from `eye`.
pub fn silhouette_edges(mesh: &TriMesh, eye: &Vec3) -> Vec<Segment> {
    let facing: Vec<bool> = (0..mesh.faces().len())
        .map(|f| mesh.face_cross(f).dot(&(eye - mesh.face_centroid(f))) > 0.0)
        .collect();
    let verts = mesh.vertices();
    mesh.edges()
        .iter()
        .filter(|e| e.faces.len() == 2 && facing[e.faces[0]] != facing[e.faces[1]])
        .map(|e| [verts[e.v[0]], verts[e.v[1]]])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineImage {
    pub shape_id: String,
    pub view_index: usize,
    pub size: usize,
    /// Row-major intensities in [0, 1]; 1 is ink.
    pub pixels: Vec<f32>,
}

impl LineImage {
    pub fn blank(shape_id: &str, view_index: usize, size: usize) -> Self {
        LineImage {
            shape_id: shape_id.to_string(),
            view_index,
            size,
            pixels: vec![0.0; size * size],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.size + x]
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn file_name(&self) -> String {
        format!("{}_v{}.pgm", self.shape_id, self.view_index)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend(
            self.pixels
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path, shape_id: &str, view_index: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgm(&bytes, shape_id, view_index)
    }

    pub fn from_pgm(bytes: &[u8], shape_id: &str, view_index: usize) -> Result<Self> {
        let bad = |m: &str| Error::parse("pgm", m);
        // header: magic, width, height, maxval separated by whitespace
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(bad("not a binary PGM"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let maxval: f32 = fields[3].parse().map_err(|_| bad("maxval"))?;
        if w != h || bytes.len() < pos + w * h {
            return Err(bad("expected square 8-bit image"));
        }
        Ok(LineImage {
            shape_id: shape_id.to_string(),
            view_index,
            size: w,
            pixels: bytes[pos..pos + w * h]
                .iter()
                .map(|&b| b as f32 / maxval)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedSeed {
    pub seed_id: usize,
    pub view_index: usize,
    pub pixel: [f64; 2],
    pub visible: bool,
}

/// Depth buffer of the whole mesh at twice the output resolution.
pub struct ViewRaster {
    pub camera: Camera,
    out: Projector,
    buf: Projector,
    bsize: usize,
    depth: Vec<f64>,
}

impl ViewRaster {
    pub fn new(mesh: &TriMesh, camera: &Camera, size: usize) -> Self {
        let bsize = 2 * size;
        let buf = camera.projector(bsize);
        let mut depth = vec![f64::INFINITY; bsize * bsize];
        for f in 0..mesh.faces().len() {
            let tri = mesh.face_vertices(f).map(|v| buf.project(&v));
            if tri.iter().any(|p| p.z <= 1e-9) {
                continue;
            }
            rasterize_triangle(&tri, bsize, &buf, &mut depth);
        }
        ViewRaster {
            camera: camera.clone(),
            out: camera.projector(size),
            buf,
            bsize,
            depth,
        }
    }

    pub fn size(&self) -> usize {
        self.bsize / 2
    }

    pub fn projector(&self) -> &Projector {
        &self.out
    }

    /// Depth test of a world-space point against the 3×3 neighbourhood of
    /// its buffer pixel.
    pub fn is_visible(&self, p: &Vec3) -> bool {
        let s = self.buf.project(p);
        if s.z <= 0.0 || !(0.0..self.bsize as f64).contains(&s.x) || !(0.0..self.bsize as f64).contains(&s.y) {
            return false;
        }
        let d = self.buf.normalized_depth(s.z);
        let (cx, cy) = (s.x as isize, s.y as isize);
        let n = self.bsize as isize;
        let mut reference = f64::NEG_INFINITY;
        for yy in (cy - 1).max(0)..=(cy + 1).min(n - 1) {
            for xx in (cx - 1).max(0)..=(cx + 1).min(n - 1) {
                reference = reference.max(self.depth[(yy * n + xx) as usize]);
            }
        }
        d <= reference + DEPTH_BIAS
    }

    /// Rasterizes `lines` plus this view's silhouette edges.
    pub fn render(&self, mesh: &TriMesh, lines: &[Segment]) -> LineImage {
        let size = self.size();
        let mut img = LineImage::blank(&mesh.shape_id, self.camera.view_index, size);
        let sil = silhouette_edges(mesh, &self.out.eye());
        for seg in lines.iter().chain(sil.iter()) {
            self.draw_segment(seg, &mut img);
        }
        img
    }

    fn draw_segment(&self, seg: &Segment, img: &mut LineImage) {
        let a = self.out.project(&seg[0]);
        let b = self.out.project(&seg[1]);
        if a.z <= 0.0 || b.z <= 0.0 {
            return;
        }
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        let n = (len * SAMPLES_PER_PX).ceil().max(1.0) as usize;
        let size = img.size as isize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = seg[0] + (seg[1] - seg[0]) * t;
            if !self.is_visible(&p) {
                continue;
            }
            let s = self.out.project(&p);
            let (x0, y0) = ((s.x - 1.5).floor() as isize, (s.y - 1.5).floor() as isize);
            for py in y0.max(0)..=(y0 + 3).min(size - 1) {
                for px in x0.max(0)..=(x0 + 3).min(size - 1) {
                    let dx = px as f64 + 0.5 - s.x;
                    let dy = py as f64 + 0.5 - s.y;
                    let cov = (1.0 - (dx * dx + dy * dy).sqrt()) as f32;
                    if cov > 0.0 {
                        let cell = &mut img.pixels[(py * size + px) as usize];
                        *cell = cell.max(cov);
                    }
                }
            }
        }
    }

    pub fn project_seeds(&self, seeds: &[SeedPoint]) -> Vec<ProjectedSeed> {
        let size = self.size() as f64;
        seeds
            .iter()
            .map(|s| {
                let p = s.pos();
                let sp = self.out.project(&p);
                let inside = sp.z > 0.0 && (0.0..size).contains(&sp.x) && (0.0..size).contains(&sp.y);
                ProjectedSeed {
                    seed_id: s.seed_id,
                    view_index: self.camera.view_index,
                    pixel: [sp.x, sp.y],
                    visible: inside && self.is_visible(&p),
                }
            })
            .collect()
    }
}

fn rasterize_triangle(tri: &[ScreenPoint; 3], n: usize, proj: &Projector, depth: &mut [f64]) {
    let [a, b, c] = tri;
    let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if area.abs() < 1e-14 {
        return;
    }
    let minx = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
    let maxx = (a.x.max(b.x).max(c.x).ceil() as isize).min(n as isize - 1);
    let miny = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
    let maxy = (a.y.max(b.y).max(c.y).ceil() as isize).min(n as isize - 1);
    if maxx < 0 || maxy < 0 {
        return;
    }
    let inv = [1.0 / a.z, 1.0 / b.z, 1.0 / c.z];
    for py in miny..=maxy as usize {
        let y = py as f64 + 0.5;
        for px in minx..=maxx as usize {
            let x = px as f64 + 0.5;
            let w0 = ((b.x - x) * (c.y - y) - (b.y - y) * (c.x - x)) / area;
            let w1 = ((c.x - x) * (a.y - y) - (c.y - y) * (a.x - x)) / area;
            let w2 = 1.0 - w0 - w1;
            if w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12 {
                continue;
            }
            let z = 1.0 / (w0 * inv[0] + w1 * inv[1] + w2 * inv[2]);
            let d = proj.normalized_depth(z);
            let cell = &mut depth[py * n + px];
            if d < *cell {
                *cell = d;
            }
        }
    }
}

/// Feature lines plus silhouettes for one camera, hidden lines removed.
pub fn render_lines(mesh: &TriMesh, lines: &[Segment], cam: &Camera) -> LineImage {
    ViewRaster::new(mesh, cam, IMAGE_SIZE).render(mesh, lines)
}

pub fn project_seeds(mesh: &TriMesh, seeds: &[SeedPoint], cam: &Camera) -> Vec<ProjectedSeed> {
    ViewRaster::new(mesh, cam, IMAGE_SIZE).project_seeds(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures::cube;

    #[test]
    fn twelve_cameras() {
        let cams = make_cameras(12);
        assert_eq!(cams.len(), 12);
        for (k, c) in cams.iter().enumerate() {
            assert_eq!(c.view_index, k);
            assert!((c.azimuth_deg() - 30.0 * k as f64).abs() < 1e-9 || k == 0);
            let e = Vec3::from(c.eye);
            let el = (e.y / e.norm()).asin().to_degrees();
            assert!((el - 30.0).abs() < 1e-9);
            assert!(e.norm() > 1.0);
        }
        assert!(cams[0].azimuth_deg().abs() < 1e-9);
    }

    #[test]
    fn camera_counts() {
        assert_eq!(make_cameras(1).len(), 1);
        let az: Vec<f64> = make_cameras(4).iter().map(|c| c.azimuth_deg().round()).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
    }

    #[test]
    fn unit_sphere_fills_frame() {
        let cam = Camera::orbit(0, 0.0, 0.0);
        let p = cam.projector(IMAGE_SIZE);
        // tangent point of the unit sphere seen from the eye, in the vertical plane
        let d = Vec3::from(cam.eye).norm();
        let t = 1.0 / d;
        let tangent = Vec3::new(0.0, (1.0 - t * t).sqrt(), t);
        let s = p.project(&tangent);
        let fill = (IMAGE_SIZE as f64 / 2.0 - s.y) / (IMAGE_SIZE as f64 / 2.0);
        assert!(fill >= 0.9 && fill <= 1.0, "fill {fill}");
    }

    #[test]
    fn cube_feature_lines() {
        let m = cube(-0.5, 1.0);
        let lines = extract_feature_lines(&m, DEFAULT_SHARP_DEG.to_radians());
        assert_eq!(lines.len(), 12);
        for [a, b] in &lines {
            // cube edges are axis-aligned, diagonals are not
            let d = b - a;
            assert_eq!(d.iter().filter(|c| c.abs() > 1e-12).count(), 1);
        }
    }

    #[test]
    fn open_plane_gives_boundary() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let m = TriMesh::new("plane", v, vec![[0, 2, 1], [0, 3, 2]]).unwrap();
        let lines = extract_feature_lines(&m, DEFAULT_SHARP_DEG.to_radians());
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn pgm_roundtrip() {
        let mut img = LineImage::blank("s", 3, 8);
        img.pixels[5] = 1.0;
        img.pixels[9] = 0.5;
        let back = LineImage::from_pgm(&img.to_pgm(), "s", 3).unwrap();
        assert_eq!(back.pixels[5], 1.0);
        assert!((back.pixels[9] - 0.5).abs() < 1.0 / 255.0);
        assert_eq!(img.file_name(), "s_v3.pgm");
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let m = cube(-0.5, 1.0).normalize_upright();
        let lines = extract_feature_lines(&m, DEFAULT_SHARP_DEG.to_radians());
        let cam = &make_cameras(12)[1];
        let a = render_lines(&m, &lines, cam);
        let b = render_lines(&m, &lines, cam);
        assert_eq!(a, b);
        assert_eq!(a.pixels.len(), IMAGE_SIZE * IMAGE_SIZE);
        assert!(a.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(a.nonzero_count() > 100);
    }

    #[test]
    fn seeds_front_visible_back_hidden() {
        let m = cube(-0.5, 1.0);
        let cam = Camera::orbit(0, 0.0, 0.0);
        let seeds = vec![
            SeedPoint { seed_id: 0, position: [0.1, 0.2, 0.5], face_index: 0, barycentric: [1.0, 0.0, 0.0] },
            SeedPoint { seed_id: 1, position: [0.1, 0.2, -0.5], face_index: 0, barycentric: [1.0, 0.0, 0.0] },
            SeedPoint { seed_id: 2, position: [40.0, 0.0, 0.0], face_index: 0, barycentric: [1.0, 0.0, 0.0] },
        ];
        let ps = project_seeds(&m, &seeds, &cam);
        assert!(ps[0].visible);
        assert!(!ps[1].visible);
        assert!(!ps[2].visible);
        // analytic projection of the front seed
        let d = Vec3::from(cam.eye).norm();
        let z = d - 0.5;
        let t = (cam.fov_y / 2.0).tan();
        let ex = (0.1 / (z * t) + 1.0) * 100.0;
        let ey = (1.0 - 0.2 / (z * t)) * 100.0;
        assert!((ps[0].pixel[0] - ex).abs() <= 0.5);
        assert!((ps[0].pixel[1] - ey).abs() <= 0.5);
    }
}
