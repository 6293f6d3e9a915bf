//! Applications over localized style regions: style-preserving quadric
//! simplification and style-aware view selection.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::config::{SimplifyMode, SimplifySection};
use crate::error::{Error, Result};
use crate::hog::HogMap;
use crate::mesh::{tri_area, TriMesh, Vec3, DEGENERATE_AREA_REL};
use crate::patchbank::Patch;
use crate::pipeline::{best_cosine, unit_descriptor, StyleRegion};

pub type SimplifyConfig = SimplifySection;

/// Weight of the constraint planes erected along boundary edges.
pub const BOUNDARY_WEIGHT: f64 = 1000.0;
/// Quadrics with a smaller determinant collapse to the edge midpoint.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplifyStats {
    pub faces_before: usize,
    pub faces_after: usize,
    pub style_faces_before: usize,
    pub style_faces_after: usize,
}

#[derive(Debug, Clone)]
pub struct Simplified {
    pub mesh: TriMesh,
    /// Per output face: descends from a style face.
    pub style: Vec<bool>,
    pub stats: SimplifyStats,
    /// Cost of every executed collapse, in order.
    pub costs: Vec<f64>,
    /// Collapse `i` came from an entry queued below the cost of the collapse
    /// preceding its insertion.
    pub out_of_order: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    cost: f64,
    a: usize,
    b: usize,
    stamp: (u32, u32),
    target: Vec3,
    low: bool,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // reversed: BinaryHeap pops the cheapest, then the lowest vertex pair
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

fn plane_quadric(n: &Vec3, p: &Vec3, w: f64) -> Matrix4<f64> {
    let q = Vector4::new(n.x, n.y, n.z, -n.dot(p));
    q * q.transpose() * w
}

fn quadric_eval(q: &Matrix4<f64>, x: &Vec3) -> f64 {
    let h = Vector4::new(x.x, x.y, x.z, 1.0);
    (h.transpose() * q * h)[0].max(0.0)
}

fn optimal_point(q: &Matrix4<f64>, a: &Vec3, b: &Vec3) -> Vec3 {
    let m: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant().abs() >= SINGULAR_DET {
        if let Some(inv) = m.try_inverse() {
            return -(inv * Vec3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]));
        }
    }
    (a + b) * 0.5
}

struct Work {
    pos: Vec<Vec3>,
    quad: Vec<Matrix4<f64>>,
    faces: Vec<[usize; 3]>,
    alive: Vec<bool>,
    style: Vec<bool>,
    vfaces: Vec<BTreeSet<usize>>,
    stamp: Vec<u32>,
    min_area: f64,
}

impl Work {
    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.vfaces[v].iter().flat_map(|&f| self.faces[f]).filter(|&u| u != v).collect()
    }

    fn touches_style(&self, a: usize, b: usize) -> bool {
        self.vfaces[a].iter().chain(&self.vfaces[b]).any(|&f| self.style[f])
    }

    fn entry(&self, a: usize, b: usize, cfg: &SimplifyConfig) -> Option<Entry> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let styled = self.touches_style(a, b);
        if styled && cfg.mode == SimplifyMode::HardLock {
            return None;
        }
        let q = self.quad[a] + self.quad[b];
        let target = optimal_point(&q, &self.pos[a], &self.pos[b]);
        let mut cost = quadric_eval(&q, &target);
        if styled {
            cost *= cfg.style_penalty;
        }
        Some(Entry { cost, a, b, stamp: (self.stamp[a], self.stamp[b]), target, low: false })
    }

    /// Faces shared by `a` and `b` when the collapse keeps the surface
    /// manifold and unfolded.
    fn check(&self, a: usize, b: usize, target: &Vec3) -> Option<Vec<usize>> {
        let shared: Vec<usize> = self.vfaces[a].intersection(&self.vfaces[b]).copied().collect();
        if shared.is_empty() || shared.len() > 2 {
            return None;
        }
        let common = self.neighbors(a).intersection(&self.neighbors(b)).count();
        if common != shared.len() {
            return None;
        }
        for &v in &[a, b] {
            for &f in &self.vfaces[v] {
                if shared.contains(&f) {
                    continue;
                }
                let old = self.faces[f].map(|i| self.pos[i]);
                let new = self.faces[f].map(|i| if i == a || i == b { *target } else { self.pos[i] });
                let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
                if tri_area(&new[0], &new[1], &new[2]) < self.min_area || n_old.dot(&n_new) <= 0.0 {
                    return None;
                }
            }
        }
        Some(shared)
    }
}

fn style_flags(mesh: &TriMesh, region: &StyleRegion) -> Result<Vec<bool>> {
    let n = mesh.faces().len();
    let mut flags = vec![false; n];
    for (&f, &score) in &region.faces {
        if f >= n {
            return Err(Error::invalid(format!("style face {f} outside mesh with {n} faces")));
        }
        flags[f] = score > 0;
    }
    Ok(flags)
}

/// Quadric edge-collapse simplification that penalizes or forbids collapses
/// touching style faces.
pub fn simplify(mesh: &TriMesh, region: &StyleRegion, cfg: &SimplifyConfig) -> Result<Simplified> {
    if !(0.0..1.0).contains(&cfg.reduction) || cfg.style_penalty < 1.0 {
        return Err(Error::invalid("reduction must lie in [0, 1) and style_penalty must be at least 1"));
    }
    let style = style_flags(mesh, region)?;
    if cfg.reduction == 0.0 {
        let n = style.iter().filter(|&&s| s).count();
        let k = mesh.faces().len();
        let stats = SimplifyStats { faces_before: k, faces_after: k, style_faces_before: n, style_faces_after: n };
        return Ok(Simplified { mesh: mesh.clone(), style, stats, costs: Vec::new(), out_of_order: Vec::new() });
    }
    let n_faces = mesh.faces().len();
    let n_style = style.iter().filter(|&&s| s).count();
    let target_faces = ((1.0 - cfg.reduction) * n_faces as f64).floor() as usize;
    if cfg.reduction > 0.0 && cfg.mode == SimplifyMode::HardLock && n_style == n_faces {
        if !cfg.best_effort {
            return Err(Error::Unachievable("every face is locked by the style region".into()));
        }
        log::warn!("{}: every face is locked; returning the input", mesh.shape_id);
    }

    let nv = mesh.vertices().len();
    let mut w = Work {
        pos: mesh.vertices().to_vec(),
        quad: vec![Matrix4::zeros(); nv],
        faces: mesh.faces().to_vec(),
        alive: vec![true; n_faces],
        style,
        vfaces: vec![BTreeSet::new(); nv],
        stamp: vec![0; nv],
        min_area: {
            let (lo, hi) = mesh.bbox();
            DEGENERATE_AREA_REL * (hi - lo).norm_squared()
        },
    };
    for (fi, f) in mesh.faces().iter().enumerate() {
        let n = mesh.face_normal(fi);
        let q = plane_quadric(&n, &w.pos[f[0]], 1.0);
        for &v in f {
            w.quad[v] += q;
            w.vfaces[v].insert(fi);
        }
    }
    for e in mesh.edges().iter().filter(|e| e.is_boundary()) {
        let f = e.faces[0];
        let (p, q) = (w.pos[e.v[0]], w.pos[e.v[1]]);
        let side = (q - p).cross(&mesh.face_normal(f));
        if side.norm() > 0.0 {
            let k = plane_quadric(&side.normalize(), &p, BOUNDARY_WEIGHT);
            w.quad[e.v[0]] += k;
            w.quad[e.v[1]] += k;
        }
    }

    let mut heap = BinaryHeap::new();
    for e in mesh.edges() {
        if let Some(en) = w.entry(e.v[0], e.v[1], cfg) {
            heap.push(en);
        }
    }
    let mut live = n_faces;
    let mut costs = Vec::new();
    let mut out_of_order = Vec::new();
    while live > target_faces {
        let Some(en) = heap.pop() else { break };
        let (a, b) = (en.a, en.b);
        if en.stamp != (w.stamp[a], w.stamp[b]) {
            continue;
        }
        let Some(shared) = w.check(a, b, &en.target) else { continue };
        for &f in &shared {
            w.alive[f] = false;
            for &v in &w.faces[f] {
                w.vfaces[v].remove(&f);
            }
        }
        live -= shared.len();
        let moved: Vec<usize> = w.vfaces[b].iter().copied().collect();
        for f in moved {
            for i in w.faces[f].iter_mut() {
                if *i == b {
                    *i = a;
                }
            }
            w.vfaces[a].insert(f);
        }
        w.vfaces[b].clear();
        w.pos[a] = en.target;
        w.quad[a] = w.quad[a] + w.quad[b];
        w.stamp[a] += 1;
        w.stamp[b] += 1;
        costs.push(en.cost);
        out_of_order.push(en.low);
        for u in w.neighbors(a) {
            if let Some(mut ne) = w.entry(a, u, cfg) {
                ne.low = ne.cost < en.cost;
                heap.push(ne);
            }
        }
    }
    if live > target_faces {
        if cfg.mode == SimplifyMode::HardLock && !cfg.best_effort && cfg.reduction > 0.0 && costs.is_empty() {
            return Err(Error::Unachievable(format!("no collapsible edge in {}", mesh.shape_id)));
        }
        log::info!("{}: stopped at {live} faces, target {target_faces}", mesh.shape_id);
    }

    let mut remap = vec![usize::MAX; nv];
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut flags = Vec::new();
    for (fi, f) in w.faces.iter().enumerate() {
        if !w.alive[fi] {
            continue;
        }
        let g = f.map(|i| {
            if remap[i] == usize::MAX {
                remap[i] = verts.len();
                verts.push(w.pos[i]);
            }
            remap[i]
        });
        faces.push(g);
        flags.push(w.style[fi]);
    }
    let out = TriMesh::new(mesh.shape_id.clone(), verts, faces)?;
    if out.faces().len() != flags.len() {
        return Err(Error::invalid("simplification produced a degenerate face"));
    }
    let stats = SimplifyStats {
        faces_before: n_faces,
        faces_after: out.faces().len(),
        style_faces_before: n_style,
        style_faces_after: flags.iter().filter(|&&s| s).count(),
    };
    Ok(Simplified { mesh: out, style: flags, stats, costs, out_of_order })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestView {
    pub view_index: usize,
    /// Matching patches per view.
    pub counts: Vec<usize>,
}

/// View with the most sampled patches matching any style descriptor at
/// cosine `tau_b`; ties go to the lower index.
pub fn best_view(shape_patches: &[Patch], style: &[HogMap], views: usize, tau_b: f64) -> Result<BestView> {
    if shape_patches.is_empty() {
        return Err(Error::invalid("shape has no sampled patches"));
    }
    let bank: Vec<Vec<f64>> = style.iter().map(unit_descriptor).collect();
    let mut counts = vec![0usize; views];
    for p in shape_patches {
        if p.view_index < views && !bank.is_empty() && best_cosine(&unit_descriptor(&p.hog), &bank) >= tau_b {
            counts[p.view_index] += 1;
        }
    }
    let mut view_index = 0;
    for v in 1..views {
        if counts[v] > counts[view_index] {
            view_index = v;
        }
    }
    if counts[view_index] == 0 {
        log::warn!("no patch of {} reaches the similarity threshold; using view 0", shape_patches[0].shape_id);
    }
    Ok(BestView { view_index, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::fixtures;
    use crate::synth::{build_shape, Content, Decoration, Motif, ShapeSpec};
    use proptest::prelude::*;

    fn grid(n: usize) -> TriMesh {
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                v.push(Vec3::new(i as f64 / n as f64, j as f64 / n as f64, 0.0));
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut f = Vec::new();
        for j in 0..n {
            for i in 0..n {
                f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        TriMesh::new("grid", v, f).unwrap()
    }

    fn empty_region(id: &str) -> StyleRegion {
        StyleRegion { shape_id: id.into(), faces: Default::default(), seed_ids: Default::default() }
    }

    fn region(id: &str, faces: &[usize]) -> StyleRegion {
        StyleRegion { shape_id: id.into(), faces: faces.iter().map(|&f| (f, 1)).collect(), seed_ids: Default::default() }
    }

    fn cfg(reduction: f64) -> SimplifyConfig {
        SimplifyConfig { reduction, ..Default::default() }
    }

    #[test]
    fn flat_grid_collapses_exactly() {
        let g = grid(16);
        let s = simplify(&g, &empty_region("grid"), &cfg(0.7)).unwrap();
        assert!(s.stats.faces_after as f64 <= 0.3 * g.faces().len() as f64, "{:?}", s.stats);
        assert!(s.mesh.vertices().iter().all(|p| p.z.abs() < 1e-6));
        // boundary square is kept
        let (lo, hi) = s.mesh.bbox();
        assert!((lo - Vec3::zeros()).norm() < 1e-9 && (hi - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-9);
        let area: f64 = (0..s.mesh.faces().len()).map(|f| s.mesh.face_area(f)).sum();
        assert!((area - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_penalty_matches_unconstrained() {
        let m = build_shape(&ShapeSpec {
            id: "b".into(),
            content: Content::Box,
            motif: Motif::Ribs,
            yaw_deg: 0.0,
            jitter: [0.0; 3],
            decoration: Decoration::All,
            resolution: 4,
        })
        .unwrap()
        .mesh;
        let plain = simplify(&m, &empty_region("b"), &cfg(0.5)).unwrap();
        let unit = simplify(&m, &region("b", &[0, 1, 2]), &SimplifyConfig { style_penalty: 1.0, ..cfg(0.5) }).unwrap();
        assert_eq!(plain.mesh.faces(), unit.mesh.faces());
        assert_eq!(plain.mesh.vertices(), unit.mesh.vertices());
    }

    #[test]
    fn zero_reduction_is_identity() {
        let c = fixtures::cube(0.0, 1.0);
        let s = simplify(&c, &empty_region("c"), &cfg(0.0)).unwrap();
        assert_eq!(s.mesh.faces(), c.faces());
        assert!(s.costs.is_empty());
    }

    #[test]
    fn hard_lock_everything() {
        let c = fixtures::cube(0.0, 1.0);
        let all: Vec<usize> = (0..c.faces().len()).collect();
        let lock = SimplifyConfig { mode: SimplifyMode::HardLock, ..cfg(0.5) };
        assert!(matches!(simplify(&c, &region("c", &all), &lock), Err(Error::Unachievable(_))));
        let best = simplify(&c, &region("c", &all), &SimplifyConfig { best_effort: true, ..lock }).unwrap();
        assert_eq!(best.stats.faces_after, c.faces().len());
        assert!(simplify(&c, &region("c", &[99]), &cfg(0.5)).is_err());
    }

    #[test]
    fn style_faces_survive() {
        let shape = build_shape(&ShapeSpec {
            id: "d".into(),
            content: Content::Cylinder,
            motif: Motif::Lattice,
            yaw_deg: 0.0,
            jitter: [0.0; 3],
            decoration: Decoration::All,
            resolution: 16,
        })
        .unwrap();
        let r = region("d", &shape.style_faces);
        for mode in [SimplifyMode::Penalty, SimplifyMode::HardLock] {
            let s = simplify(&shape.mesh, &r, &SimplifyConfig { mode, ..cfg(0.7) }).unwrap();
            let st = s.stats;
            assert!(st.faces_after as f64 <= 0.35 * st.faces_before as f64, "{mode:?} {st:?}");
            assert!(st.style_faces_after as f64 >= 0.9 * st.style_faces_before as f64, "{mode:?} {st:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn collapse_invariants(n in 3usize..10, reduction in 0.05f64..0.9, bump in 0.0f64..0.3) {
            let g = grid(n);
            let verts: Vec<Vec3> = g.vertices().iter().map(|p| Vec3::new(p.x, p.y, bump * (3.0 * p.x).sin() * p.y)).collect();
            let m = TriMesh::new("g", verts, g.faces().to_vec()).unwrap();
            let s = simplify(&m, &empty_region("g"), &cfg(reduction)).unwrap();
            prop_assert!(s.stats.faces_after <= s.stats.faces_before);
            let (lo, hi) = s.mesh.bbox();
            let min_area = DEGENERATE_AREA_REL * (hi - lo).norm_squared();
            prop_assert!((0..s.mesh.faces().len()).all(|f| s.mesh.face_area(f) >= min_area));
            prop_assert!(s.mesh.edges().iter().all(|e| !e.is_non_manifold()));
            for i in 1..s.costs.len() {
                if !s.out_of_order[i] {
                    prop_assert!(s.costs[i] >= s.costs[i - 1], "{} < {}", s.costs[i], s.costs[i - 1]);
                }
            }
        }
    }

    #[test]
    fn best_view_ties_and_duplicates() {
        let mut h = HogMap::zeros(2, 2);
        h.data[0] = 1.0;
        let mut other = HogMap::zeros(2, 2);
        other.data[5] = 1.0;
        let patch = |view: usize, hog: &HogMap| Patch {
            patch_id: 0,
            shape_id: "s".into(),
            seed_id: 0,
            view_index: view,
            rect: [0, 0, 16, 16],
            center: [8.0, 8.0],
            hog: hog.clone(),
        };
        let ps = vec![patch(2, &h), patch(7, &h), patch(3, &other)];
        let bv = best_view(&ps, &[h.clone()], 12, 0.7).unwrap();
        assert_eq!(bv.view_index, 2);
        assert_eq!(bv, best_view(&ps, &[h.clone(), h.clone()], 12, 0.7).unwrap());
        let none = best_view(&ps, &[HogMap::zeros(2, 2)], 12, 0.7).unwrap();
        assert_eq!(none.view_index, 0);
        assert!(best_view(&[], &[h], 12, 0.7).is_err());
    }
}
