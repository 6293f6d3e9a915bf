//! Indexed triangle meshes: loading, validation, normalization and the
//! geometric queries used by projection and the applications.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Relative area below which a face counts as degenerate (times bbox diagonal²).
pub const DEGENERATE_AREA_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Sorted vertex pair.
    pub v: [usize; 2],
    /// Incident faces in insertion order.
    pub faces: Vec<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.faces.len() == 1
    }

    pub fn is_non_manifold(&self) -> bool {
        self.faces.len() > 2
    }
}

/// Immutable triangle mesh with edge adjacency.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub shape_id: String,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    edge_lookup: HashMap<(usize, usize), usize>,
    dropped_degenerate: usize,
}

/// A point on the surface of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub seed_id: usize,
    pub position: [f64; 3],
    pub face_index: usize,
    pub barycentric: [f64; 3],
}

impl SeedPoint {
    pub fn pos(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriMesh {
    /// Builds a validated mesh. Out-of-range indices are an error; degenerate
    /// faces are dropped and counted.
    pub fn new(
        shape_id: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let shape_id = shape_id.into();
        let nv = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::parse(
                format!("mesh {shape_id}"),
                format!("face {f:?} references a vertex >= {nv}"),
            ));
        }
        let diag2 = bbox_of(&vertices).map_or(0.0, |(lo, hi)| (hi - lo).norm_squared());
        let min_area = DEGENERATE_AREA_REL * diag2;
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0;
        for f in faces {
            let area = tri_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            let repeated = f[0] == f[1] || f[1] == f[2] || f[0] == f[2];
            if repeated || area < min_area || area == 0.0 {
                dropped += 1;
            } else {
                kept.push(f);
            }
        }
        if dropped > 0 {
            log::warn!("{shape_id}: dropped {dropped} degenerate faces");
        }
        if kept.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_lookup = HashMap::new();
        for (fi, f) in kept.iter().enumerate() {
            for k in 0..3 {
                let key = edge_key(f[k], f[(k + 1) % 3]);
                let idx = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        faces: Vec::with_capacity(2),
                    });
                    edges.len() - 1
                });
                edges[idx].faces.push(fi);
            }
        }
        let non_manifold = edges.iter().filter(|e| e.is_non_manifold()).count();
        if non_manifold > 0 {
            log::debug!("{shape_id}: {non_manifold} non-manifold edges");
        }
        Ok(TriMesh {
            shape_id,
            vertices,
            faces: kept,
            edges,
            edge_lookup,
            dropped_degenerate: dropped,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn non_manifold_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_non_manifold())
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&edge_key(a, b)).copied()
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized normal (twice the area vector).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.face_cross(f).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        bbox_of(&self.vertices).expect("mesh has vertices")
    }

    /// Area-weighted surface centroid.
    pub fn centroid(&self) -> Vec3 {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let a = self.face_area(f);
            acc += self.face_centroid(f) * a;
            total += a;
        }
        acc / total
    }

    /// Centroid at the origin and bounding-sphere radius (about the centroid)
    /// equal to one. The up axis is left alone.
    pub fn normalize_upright(&self) -> TriMesh {
        let c = self.centroid();
        let radius = self
            .referenced_vertices()
            .map(|v| (self.vertices[v] - c).norm())
            .fold(0.0, f64::max);
        let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = (*v - c) * scale;
        }
        out
    }

    fn referenced_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        (0..self.vertices.len()).filter(move |&i| used[i])
    }

    /// Area-uniform surface samples, deterministic for a fixed seed.
    pub fn sample_surface(&self, n: usize, rng_seed: u64) -> Vec<SeedPoint> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cumulative.push(total);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..n)
            .map(|seed_id| {
                let r: f64 = rng.random::<f64>() * total;
                let face = cumulative
                    .partition_point(|&c| c <= r)
                    .min(self.faces.len() - 1);
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let bary = [1.0 - u - v, u, v];
                let [a, b, c] = self.face_vertices(face);
                let p = a * bary[0] + b * bary[1] + c * bary[2];
                SeedPoint {
                    seed_id,
                    position: [p.x, p.y, p.z],
                    face_index: face,
                    barycentric: bary,
                }
            })
            .collect()
    }

    /// Angle between the normals of the two faces sharing `edge`, in [0, π].
    pub fn dihedral_angle(&self, edge: usize) -> Result<f64> {
        let e = &self.edges[edge];
        if e.faces.len() < 2 {
            return Err(Error::NoDihedral(e.v[0], e.v[1]));
        }
        let n0 = self.face_normal(e.faces[0]);
        let n1 = self.face_normal(e.faces[1]);
        Ok(n0.dot(&n1).clamp(-1.0, 1.0).acos())
    }

    /// Same vertices with a replacement face list (used by simplification).
    pub fn with_faces(&self, faces: Vec<[usize; 3]>) -> Result<TriMesh> {
        TriMesh::new(self.shape_id.clone(), self.vertices.clone(), faces)
    }

    /// Drops unreferenced vertices and reindexes faces.
    pub fn compacted(&self) -> TriMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for f in &self.faces {
            for &i in f {
                if remap[i] == usize::MAX {
                    remap[i] = verts.len();
                    verts.push(self.vertices[i]);
                }
            }
        }
        let faces = self
            .faces
            .iter()
            .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
            .collect();
        TriMesh::new(self.shape_id.clone(), verts, faces).expect("compacting a valid mesh")
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.shape_id);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn tri_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn bbox_of(vertices: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *vertices.first()?;
    Some(vertices.iter().fold((first, first), |(lo, hi), v| {
        (lo.inf(v), hi.sup(v))
    }))
}

/// Parses Wavefront OBJ text. Only `v` and `f` records are read; polygons
/// are fan-triangulated.
pub fn parse_obj(text: &str, shape_id: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let what = || format!("obj {shape_id}");
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(what(), format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::parse(
                        what(),
                        format!("line {}: vertex needs 3 coordinates", lineno + 1),
                    ));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in parts {
                    let idx_str = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str.parse().map_err(|_| {
                        Error::parse(what(), format!("line {}: bad index {tok:?}", lineno + 1))
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(Error::parse(
                            what(),
                            format!("line {}: index {idx} out of range", lineno + 1),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(
                        what(),
                        format!("line {}: face with fewer than 3 vertices", lineno + 1),
                    ));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    TriMesh::new(shape_id, vertices, faces)
}

pub fn load_mesh(path: &Path, shape_id: &str) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, shape_id)
}
