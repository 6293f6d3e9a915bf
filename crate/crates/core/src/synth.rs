//! Procedural benchmark: simple solids whose side panels carry one of four
//! raised decorative motifs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Content {
    Box,
    Cylinder,
    Plate,
    Frustum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motif {
    Ribs,
    Flutes,
    Lattice,
    Bosses,
}

impl Content {
    pub const ALL: [Content; 4] = [Content::Box, Content::Cylinder, Content::Plate, Content::Frustum];
}

impl Motif {
    pub const ALL: [Motif; 4] = [Motif::Ribs, Motif::Flutes, Motif::Lattice, Motif::Bosses];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Ribs => "ribs",
            Motif::Flutes => "flutes",
            Motif::Lattice => "lattice",
            Motif::Bosses => "bosses",
        }
    }

    pub fn from_name(s: &str) -> Option<Motif> {
        Motif::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Content {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Content::Box => "box",
            Content::Cylinder => "cylinder",
            Content::Plate => "plate",
            Content::Frustum => "frustum",
        };
        f.write_str(s)
    }
}

/// Which panels receive the motif; `All` covers the sides and the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decoration {
    All,
    /// Only panels whose outward normal points along +X before yaw.
    PositiveX,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub id: String,
    pub content: Content,
    pub motif: Motif,
    /// Rotation about +Y in degrees.
    pub yaw_deg: f64,
    /// Body dimension jitter in `[-1, 1]`.
    pub jitter: [f64; 3],
    pub decoration: Decoration,
    /// Body panels are split into `resolution × resolution` quads.
    pub resolution: usize,
}

#[derive(Debug, Clone)]
pub struct SynthShape {
    pub spec: ShapeSpec,
    pub mesh: TriMesh,
    /// Faces that belong to motif elements.
    pub style_faces: Vec<usize>,
}

const RAISE: f64 = 0.04;
const BAR_WIDTH: f64 = 0.04;
const PITCH: f64 = 0.14;
const BOSS_SIDE: f64 = 0.07;
const MARGIN: f64 = 0.05;

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    style: Vec<bool>,
    weld: HashMap<[i64; 3], usize>,
}

impl Builder {
    fn vertex(&mut self, p: Vec3) -> usize {
        let key = [(p.x * 1e7).round() as i64, (p.y * 1e7).round() as i64, (p.z * 1e7).round() as i64];
        if let Some(&i) = self.weld.get(&key) {
            return i;
        }
        self.vertices.push(p);
        self.weld.insert(key, self.vertices.len() - 1);
        self.vertices.len() - 1
    }

    fn tri(&mut self, a: Vec3, b: Vec3, c: Vec3, style: bool) {
        let f = [self.vertex(a), self.vertex(b), self.vertex(c)];
        self.faces.push(f);
        self.style.push(style);
    }

    /// Counter-clockwise quad seen from outside, split into a grid.
    fn quad(&mut self, c: [Vec3; 4], res: usize, style: bool) {
        let res = res.max(1);
        let at = |i: usize, j: usize| {
            let (s, t) = (i as f64 / res as f64, j as f64 / res as f64);
            let bottom = c[0] + (c[1] - c[0]) * s;
            let top = c[3] + (c[2] - c[3]) * s;
            bottom + (top - bottom) * t
        };
        for i in 0..res {
            for j in 0..res {
                let (p00, p10, p11, p01) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
                self.tri(p00, p10, p11, style);
                self.tri(p00, p11, p01, style);
            }
        }
    }

    /// Convex polygon (counter-clockwise from outside) fanned from its
    /// centroid, with each rim edge split `res` times.
    fn cap(&mut self, rim: &[Vec3], res: usize) {
        let res = res.max(1);
        let center = rim.iter().fold(Vec3::zeros(), |a, b| a + b) / rim.len() as f64;
        for k in 0..rim.len() {
            let (a, b) = (rim[k], rim[(k + 1) % rim.len()]);
            for s in 0..res {
                let p = a + (b - a) * (s as f64 / res as f64);
                let q = a + (b - a) * ((s + 1) as f64 / res as f64);
                self.tri(center, p, q, false);
            }
        }
    }

    /// Closed box from a base rectangle on a panel, raised along `n`.
    fn raised(&mut self, corners: [Vec3; 4], n: Vec3, height: f64) {
        let top = corners.map(|c| c + n * height);
        let b = corners;
        self.quad(top, 1, true);
        self.quad([b[3], b[2], b[1], b[0]], 1, true);
        for k in 0..4 {
            let l = (k + 1) % 4;
            self.quad([b[k], b[l], top[l], top[k]], 1, true);
        }
    }
}

/// Planar convex side panel: `origin + u * eu + v * ev` for `(u, v)` inside
/// `outline` (counter-clockwise when seen from outside).
struct Panel {
    origin: Vec3,
    eu: Vec3,
    ev: Vec3,
    outline: Vec<Vector2<f64>>,
    /// Edges along which stripes may run up to the outline.
    open_edges: Vec<bool>,
}

impl Panel {
    fn normal(&self) -> Vec3 {
        self.eu.cross(&self.ev).normalize()
    }

    fn point(&self, p: Vector2<f64>) -> Vec3 {
        self.origin + self.eu * p.x + self.ev * p.y
    }

    /// Parameter interval of `p + t d` inside the outline shrunk by `margin`.
    fn clip(&self, p: Vector2<f64>, d: Vector2<f64>, margin: f64) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let n = self.outline.len();
        for k in 0..n {
            let a = self.outline[k];
            let b = self.outline[(k + 1) % n];
            let e = b - a;
            let inward = Vector2::new(-e.y, e.x).normalize();
            let margin = if self.open_edges[k] { 0.0 } else { margin };
            // inward . (p + t d - a) >= margin
            let num = margin - inward.dot(&(p - a));
            let den = inward.dot(&d);
            if den.abs() < 1e-12 {
                if num > 0.0 {
                    return None;
                }
            } else if den > 0.0 {
                lo = lo.max(num / den);
            } else {
                hi = hi.min(num / den);
            }
        }
        (hi - lo > 1e-9).then_some((lo, hi))
    }

    fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for p in &self.outline {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    fn bar(&self, b: &mut Builder, from: Vector2<f64>, to: Vector2<f64>, width: f64) {
        let d = (to - from).normalize();
        let side = Vector2::new(-d.y, d.x) * (width / 2.0);
        let corners = [from - side, to - side, to + side, from + side].map(|q| self.point(q));
        b.raised(corners, self.normal(), RAISE);
    }

    /// Bars along `dir`, one per `PITCH` step across the panel.
    fn stripes(&self, b: &mut Builder, dir: Vector2<f64>) {
        let dir = dir.normalize();
        let across = Vector2::new(-dir.y, dir.x);
        let (lo, hi) = self.bounds();
        let center = (lo + hi) / 2.0;
        let reach = (hi - lo).norm() / 2.0;
        let steps = (reach / PITCH).floor() as i64;
        for s in -steps..=steps {
            let p = center + across * (s as f64 * PITCH);
            if let Some((t0, t1)) = self.clip(p, dir, MARGIN + BAR_WIDTH / 2.0) {
                if t1 - t0 >= 2.0 * BAR_WIDTH {
                    self.bar(b, p + dir * t0, p + dir * t1, BAR_WIDTH);
                }
            }
        }
    }

    fn decorate(&self, b: &mut Builder, motif: Motif) {
        match motif {
            Motif::Ribs => self.stripes(b, Vector2::new(1.0, 0.0)),
            Motif::Flutes => self.stripes(b, Vector2::new(0.0, 1.0)),
            Motif::Lattice => {
                self.stripes(b, Vector2::new(1.0, 1.0));
                self.stripes(b, Vector2::new(1.0, -1.0));
            }
            Motif::Bosses => {
                let (lo, hi) = self.bounds();
                let center = (lo + hi) / 2.0;
                let half = BOSS_SIDE / 2.0;
                let nu = ((hi.x - lo.x) / 2.0 / PITCH).floor() as i64;
                let nv = ((hi.y - lo.y) / 2.0 / PITCH).floor() as i64;
                for j in -nv..=nv {
                    // alternate rows shift by half a pitch
                    let shift = if j.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
                    for i in -nu - 1..=nu {
                        let c = center + Vector2::new(i as f64 + shift, j as f64) * PITCH;
                        let inside = self
                            .clip(c - Vector2::new(half, 0.0), Vector2::new(1.0, 0.0), MARGIN)
                            .is_some_and(|(t0, t1)| t0 <= 0.0 && t1 >= BOSS_SIDE)
                            && self
                                .clip(c - Vector2::new(0.0, half), Vector2::new(0.0, 1.0), MARGIN)
                                .is_some_and(|(t0, t1)| t0 <= 0.0 && t1 >= BOSS_SIDE);
                        if inside {
                            let corners = [(-half, -half), (half, -half), (half, half), (-half, half)]
                                .map(|(u, v)| self.point(c + Vector2::new(u, v)));
                            b.raised(corners, self.normal(), RAISE);
                        }
                    }
                }
            }
        }
    }
}

/// Side panel spanning the quad `c` (counter-clockwise from outside, `c[0]`
/// bottom-left), parameterized with `eu` along the bottom edge. With
/// `open_sides` stripes continue across the left and right edges.
fn quad_panel(c: [Vec3; 4], open_sides: bool) -> Panel {
    let eu = (c[1] - c[0]).normalize();
    let n = (c[1] - c[0]).cross(&(c[3] - c[0])).normalize();
    let ev = n.cross(&eu);
    let to2 = |p: Vec3| Vector2::new((p - c[0]).dot(&eu), (p - c[0]).dot(&ev));
    Panel {
        origin: c[0],
        eu,
        ev,
        outline: c.iter().map(|&p| to2(p)).collect(),
        open_edges: vec![false, open_sides, false, open_sides],
    }
}

/// Panel over a convex ring (counter-clockwise seen from outside).
fn cap_panel(rim: &[Vec3]) -> Panel {
    let eu = (rim[1] - rim[0]).normalize();
    let n = (rim[1] - rim[0]).cross(&(rim[2] - rim[0])).normalize();
    let ev = n.cross(&eu);
    let to2 = |p: &Vec3| Vector2::new((p - rim[0]).dot(&eu), (p - rim[0]).dot(&ev));
    Panel { origin: rim[0], eu, ev, outline: rim.iter().map(to2).collect(), open_edges: vec![false; rim.len()] }
}

/// Lateral quads of a prism or frustum between two rings (counter-clockwise
/// seen from above).
fn lateral(bottom: &[Vec3], top: &[Vec3]) -> Vec<[Vec3; 4]> {
    let n = bottom.len();
    (0..n).map(|k| {
        let l = (k + 1) % n;
        [bottom[k], bottom[l], top[l], top[k]]
    })
    .collect()
}

fn ring(n: usize, rx: f64, rz: f64, y: f64, phase: f64) -> Vec<Vec3> {
    // counter-clockwise when seen from +Y
    (0..n)
        .map(|k| {
            let a = phase + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Vec3::new(rx * a.cos(), y, -rz * a.sin())
        })
        .collect()
}

pub fn build_shape(spec: &ShapeSpec) -> Result<SynthShape> {
    let j = spec.jitter;
    let (bottom, top) = match spec.content {
        Content::Box => {
            let (w, h, d) = (1.0 + 0.2 * j[0], 1.0 + 0.2 * j[1], 1.0 + 0.2 * j[2]);
            (ring(4, w / 2.0 * 2f64.sqrt(), d / 2.0 * 2f64.sqrt(), -h / 2.0, std::f64::consts::FRAC_PI_4),
             ring(4, w / 2.0 * 2f64.sqrt(), d / 2.0 * 2f64.sqrt(), h / 2.0, std::f64::consts::FRAC_PI_4))
        }
        Content::Cylinder => {
            let (r, h) = (0.55 + 0.08 * j[0], 1.3 + 0.2 * j[1]);
            (ring(12, r, r, -h / 2.0, 0.0), ring(12, r, r, h / 2.0, 0.0))
        }
        Content::Plate => {
            let (w, h, d) = (1.6 + 0.2 * j[0], 1.0 + 0.15 * j[1], 0.3 + 0.05 * j[2]);
            (ring(4, w / 2.0 * 2f64.sqrt(), d / 2.0 * 2f64.sqrt(), -h / 2.0, std::f64::consts::FRAC_PI_4),
             ring(4, w / 2.0 * 2f64.sqrt(), d / 2.0 * 2f64.sqrt(), h / 2.0, std::f64::consts::FRAC_PI_4))
        }
        Content::Frustum => {
            let (b, t, h) = (1.3 + 0.15 * j[0], 0.7 + 0.1 * j[1], 1.1 + 0.15 * j[2]);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (ring(4, b * s, b * s, -h / 2.0, std::f64::consts::FRAC_PI_4), ring(4, t * s, t * s, h / 2.0, std::f64::consts::FRAC_PI_4))
        }
    };
    let mut b = Builder::default();
    let sides = lateral(&bottom, &top);
    for q in &sides {
        b.quad(*q, spec.resolution, false);
    }
    b.cap(&top, spec.resolution);
    b.cap(&bottom.iter().rev().copied().collect::<Vec<_>>(), spec.resolution);

    let mut panels: Vec<Panel> = sides.iter().map(|q| quad_panel(*q, spec.content == Content::Cylinder)).collect();
    panels.push(cap_panel(&top));
    for panel in &panels {
        let n = panel.normal();
        let keep = match spec.decoration {
            Decoration::All => true,
            Decoration::PositiveX => n.x > 0.9,
            Decoration::None => false,
        };
        if keep {
            panel.decorate(&mut b, spec.motif);
        }
    }

    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), spec.yaw_deg.to_radians());
    let vertices: Vec<Vec3> = b.vertices.iter().map(|v| rot * v).collect();
    let mesh = TriMesh::new(&spec.id, vertices, b.faces.clone())?;
    if mesh.dropped_degenerate() > 0 {
        return Err(Error::invalid(format!("generated shape {} has degenerate faces", spec.id)));
    }
    let style_faces = b.style.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect();
    Ok(SynthShape { spec: spec.clone(), mesh, style_faces })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub shapes: usize,
    pub seed: u64,
    pub resolution: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec { shapes: 40, seed: 0, resolution: 1 }
    }
}

/// Shape `k` has content `k mod 4` and motif `(k + k / 4) mod 4`, so every
/// block of four shapes holds each motif once and 40 shapes cover every
/// pairing at least twice. Shapes stay upright and face the same way up to
/// a small yaw.
pub fn benchmark_specs(spec: &BenchmarkSpec) -> Vec<ShapeSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.shapes)
        .map(|k| ShapeSpec {
            id: format!("s{k:03}"),
            content: Content::ALL[k % 4],
            motif: Motif::ALL[(k + k / 4) % 4],
            yaw_deg: rng.random_range(-10.0..10.0),
            jitter: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            decoration: Decoration::All,
            resolution: spec.resolution,
        })
        .collect()
}

/// Labels for a `fraction` of the shapes of every style, at least one each.
pub fn planted_labels(truth: &BTreeMap<String, String>, fraction: f64, seed: u64) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_style: BTreeMap<&String, Vec<&String>> = BTreeMap::new();
    for (id, style) in truth {
        by_style.entry(style).or_default().push(id);
    }
    let mut out = BTreeMap::new();
    for (style, mut ids) in by_style {
        ids.shuffle(&mut rng);
        let take = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len());
        for id in &ids[..take] {
            out.insert((*id).clone(), style.clone());
        }
    }
    out
}

/// Triplets `(a, b, c)` with `a`, `b` sharing a style that `c` lacks.
pub fn planted_triplets(truth: &BTreeMap<String, String>, count: usize, seed: u64) -> Result<Vec<[String; 3]>> {
    let ids: Vec<&String> = truth.keys().collect();
    let styles: BTreeSet<&String> = truth.values().collect();
    if styles.len() < 2 || styles.iter().all(|s| truth.values().filter(|v| v == s).count() < 2) {
        return Err(Error::invalid("triplets need two styles and a style with two shapes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = ids[rng.random_range(0..ids.len())];
        let b = ids[rng.random_range(0..ids.len())];
        let c = ids[rng.random_range(0..ids.len())];
        if a != b && truth[a] == truth[b] && truth[c] != truth[a] {
            out.push([a.clone(), b.clone(), c.clone()]);
        }
    }
    Ok(out)
}

/// Ground-truth style per shape id.
pub fn truth_map(shapes: &[SynthShape]) -> BTreeMap<String, String> {
    shapes.iter().map(|s| (s.spec.id.clone(), s.spec.motif.name().to_string())).collect()
}

pub fn benchmark(spec: &BenchmarkSpec) -> Result<Vec<SynthShape>> {
    benchmark_specs(spec).iter().map(build_shape).collect()
}

/// Writes `meshes/<id>.obj`, `manifest.json` and `truth.csv` under `dir`.
pub fn write_benchmark(shapes: &[SynthShape], dir: &Path) -> Result<()> {
    let mesh_dir = dir.join("meshes");
    std::fs::create_dir_all(&mesh_dir).map_err(|e| Error::io(&mesh_dir, e))?;
    let mut entries = Vec::new();
    let mut truth = String::from("shape_id,style\n");
    for s in shapes {
        let rel = format!("meshes/{}.obj", s.spec.id);
        s.mesh.write_obj(&dir.join(&rel))?;
        entries.push(crate::io::ManifestEntry { id: s.spec.id.clone(), mesh: rel.into() });
        truth.push_str(&format!("{},{}\n", s.spec.id, s.spec.motif));
    }
    crate::io::Manifest { shapes: entries }.write(&dir.join("manifest.json"))?;
    let truth_path = dir.join("truth.csv");
    std::fs::write(&truth_path, truth).map_err(|e| Error::io(&truth_path, e))?;
    Ok(())
}
