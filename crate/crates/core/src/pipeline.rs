//! The staged co-analysis: render views, sample and pre-select patches,
//! encode, fuse with PSLF, cluster, re-select discriminative patches and
//! iterate; then backproject the final style patches onto the surfaces.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{
    apply_triplets, decompose_triplets, eigengap_count, purity, spectral_cluster_with, symnmf_cluster, ConstraintSet,
    SimilarityMatrix,
};
use crate::config::{digest, RunConfig};
use crate::error::{Error, Result};
use crate::hog::{encode_map, hog_image, HogMap, PreparedFilter};
use crate::lineproj::{extract_feature_lines, make_cameras, Camera, LineImage, ProjectedSeed, ViewRaster};
use crate::mesh::{SeedPoint, TriMesh, Vec3};
use crate::patchbank::{preselect_kmeans, reselect_discriminant, sample_view_patches, Patch, SupportMatrix};
use crate::pslf::{fit_labeled, fit_unsupervised, predict_labels, LabelMatrix, PslfModel};

/// Per-shape seed derived from the shape id so results do not depend on
/// manifest order.
pub fn shape_seed(base: u64, id: &str) -> u64 {
    use sha2::Digest;
    let h = sha2::Sha256::digest(id.as_bytes());
    u64::from_le_bytes(h[..8].try_into().unwrap()) ^ base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Views and seeds of one normalized shape. `seeds` holds the densified
/// sample; its first `cfg.seeds` entries are the analysis seeds.
#[derive(Debug, Clone)]
pub struct RenderedShape {
    pub id: String,
    pub mesh: TriMesh,
    pub seeds: Vec<SeedPoint>,
    pub images: Vec<LineImage>,
    /// `[view][seed]`
    pub projected: Vec<Vec<ProjectedSeed>>,
}

pub fn cameras(cfg: &RunConfig) -> Vec<Camera> {
    make_cameras(cfg.views)
}

pub fn render_shape(id: &str, mesh: &TriMesh, cfg: &RunConfig) -> RenderedShape {
    let mut mesh = mesh.normalize_upright();
    mesh.shape_id = id.to_string();
    let lines = extract_feature_lines(&mesh, cfg.sharp_angle_deg.to_radians());
    let seeds = mesh.sample_surface(cfg.seeds * cfg.densify, shape_seed(cfg.seed, id));
    let mut images = Vec::with_capacity(cfg.views);
    let mut projected = Vec::with_capacity(cfg.views);
    for cam in cameras(cfg) {
        let raster = ViewRaster::new(&mesh, &cam, cfg.image_size);
        images.push(raster.render(&mesh, &lines));
        projected.push(raster.project_seeds(&seeds));
    }
    RenderedShape { id: id.to_string(), mesh, seeds, images, projected }
}

pub fn render_all(shapes: &[(String, TriMesh)], cfg: &RunConfig) -> Vec<RenderedShape> {
    shapes.par_iter().map(|(id, m)| render_shape(id, m, cfg)).collect()
}

/// Everything the cluster-and-select loop reuses across iterations and
/// parameter sweeps.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub views: usize,
    pub patch_size: usize,
    pub analysis_seeds: usize,
    pub image_size: usize,
    /// Sorted by id.
    pub shapes: Vec<RenderedShape>,
    /// `[shape][view]`
    pub maps: Vec<Vec<HogMap>>,
    /// Indexed by patch id.
    pub patches: Vec<Patch>,
    /// Pre-selected patch ids per view.
    pub banks: Vec<Vec<usize>>,
    /// Per view, `5 |bank| × N` pooled responses.
    pub encodings: Vec<DMatrix<f64>>,
    /// Per view, shapes × bank patches.
    pub support: Vec<SupportMatrix>,
}

impl Prepared {
    pub fn n_shapes(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape_ids(&self) -> Vec<String> {
        self.shapes.iter().map(|s| s.id.clone()).collect()
    }

    pub fn shape_index(&self, id: &str) -> Option<usize> {
        self.shapes.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }
}

fn view_seed(base: u64, view: usize) -> u64 {
    base ^ (view as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Samples, pre-selects and encodes. Shapes are reordered by id.
pub fn prepare(mut shapes: Vec<RenderedShape>, cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    if shapes.len() < 2 {
        return Err(Error::invalid("analysis needs at least two shapes"));
    }
    shapes.sort_by(|a, b| a.id.cmp(&b.id));
    if shapes.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::invalid("duplicate shape ids"));
    }
    for s in &shapes {
        if s.images.len() != cfg.views || s.seeds.len() < cfg.seeds {
            return Err(Error::invalid(format!("shape {} was rendered with different settings", s.id)));
        }
    }
    let maps: Vec<Vec<HogMap>> = shapes
        .par_iter()
        .map(|s| s.images.iter().map(hog_image).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let mut patches = Vec::new();
    for (s, shape) in shapes.iter().enumerate() {
        for v in 0..cfg.views {
            let seeds: Vec<ProjectedSeed> = shape.projected[v].iter().filter(|p| p.seed_id < cfg.seeds).copied().collect();
            let mut ps = sample_view_patches(&shape.images[v], &maps[s][v], &seeds, cfg.patch_size, patches.len())?;
            patches.append(&mut ps);
        }
    }

    let banks: Vec<Vec<usize>> = (0..cfg.views)
        .into_par_iter()
        .map(|v| {
            let ids: Vec<usize> = patches.iter().filter(|p| p.view_index == v).map(|p| p.patch_id).collect();
            let refs: Vec<&Patch> = ids.iter().map(|&i| &patches[i]).collect();
            preselect_kmeans(&refs, cfg.preselect_k, view_seed(cfg.seed, v)).into_iter().map(|k| ids[k]).collect()
        })
        .collect();
    if banks.iter().all(|b| b.is_empty()) {
        return Err(Error::invalid("no usable patches in any view"));
    }

    let filters: Vec<Vec<PreparedFilter>> =
        banks.iter().map(|b| b.iter().map(|&i| PreparedFilter::new(&patches[i].hog)).collect()).collect();
    let columns: Vec<Vec<Vec<f64>>> = maps
        .par_iter()
        .map(|per_view| (0..cfg.views).map(|v| encode_map(&per_view[v], &filters[v])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n = shapes.len();
    let encodings: Vec<DMatrix<f64>> =
        (0..cfg.views).map(|v| DMatrix::from_fn(5 * banks[v].len(), n, |r, s| columns[s][v][r])).collect();
    let shape_ids: Vec<String> = shapes.iter().map(|s| s.id.clone()).collect();
    let support = (0..cfg.views)
        .map(|v| {
            let x = (0..n)
                .flat_map(|s| (0..banks[v].len()).map(move |j| (s, j)))
                .map(|(s, j)| u8::from(encodings[v][(5 * j, s)] >= cfg.tau_s))
                .collect();
            SupportMatrix { shape_ids: shape_ids.clone(), patch_ids: banks[v].clone(), tau_s: cfg.tau_s, x }
        })
        .collect();
    Ok(Prepared {
        views: cfg.views,
        patch_size: cfg.patch_size,
        analysis_seeds: cfg.seeds,
        image_size: cfg.image_size,
        shapes,
        maps,
        patches,
        banks,
        encodings,
        support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unsupervised,
    Labels,
    Triplets,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "unsupervised" => Ok(Mode::Unsupervised),
            "labels" => Ok(Mode::Labels),
            "triplets" => Ok(Mode::Triplets),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// User input keyed by shape id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Supervision {
    pub labels: BTreeMap<String, String>,
    pub triplets: Vec<[String; 3]>,
}

impl From<crate::io::ConstraintFile> for Supervision {
    fn from(c: crate::io::ConstraintFile) -> Self {
        Supervision { labels: c.labels, triplets: c.triplets }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub assignment: Vec<usize>,
    pub clusters: usize,
    /// Filters used for encoding in this iteration.
    pub k_size: usize,
    /// Re-selected filters for the next iteration.
    pub selected: usize,
    pub churn: f64,
    pub objective: f64,
    pub pslf_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePatch {
    pub patch_id: usize,
    pub shape_id: String,
    pub seed_id: usize,
    pub view_index: usize,
    pub rect: [usize; 4],
    /// Clusters for which the patch is discriminative.
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRegion {
    pub shape_id: String,
    /// Face index to number of contributing (patch, view) pairs.
    pub faces: BTreeMap<usize, u32>,
    pub seed_ids: BTreeSet<usize>,
}

impl StyleRegion {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct StyleResult {
    pub mode: Mode,
    pub shape_ids: Vec<String>,
    pub assignment: Vec<usize>,
    pub clusters: usize,
    /// Class names in labels mode, indexed by assignment value.
    pub class_names: Option<Vec<String>>,
    pub style_patches: Vec<StylePatch>,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub n_labeled: usize,
    pub constraint_satisfaction: Option<f64>,
    pub purity: Option<f64>,
    pub regions: Vec<StyleRegion>,
    pub model: PslfModel,
}

impl StyleResult {
    pub fn style_patch_ids(&self) -> BTreeSet<usize> {
        self.style_patches.iter().map(|p| p.patch_id).collect()
    }
}

/// True when both labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && crate::cluster::canonical_labels(a) == crate::cluster::canonical_labels(b)
}

fn select_rows(m: &DMatrix<f64>, positions: &[usize]) -> DMatrix<f64> {
    let rows: Vec<usize> = positions.iter().flat_map(|&j| 5 * j..5 * j + 5).collect();
    m.select_rows(&rows)
}

struct Resolved {
    /// Labels mode: class index per labeled shape.
    labels: BTreeMap<usize, usize>,
    class_names: Vec<String>,
    constraints: ConstraintSet,
}

fn resolve(prep: &Prepared, mode: Mode, sup: &Supervision) -> Result<Resolved> {
    let index = |id: &str| prep.shape_index(id).ok_or_else(|| Error::Config(format!("constraint names unknown shape {id}")));
    let mut out = Resolved { labels: BTreeMap::new(), class_names: Vec::new(), constraints: ConstraintSet::default() };
    match mode {
        Mode::Unsupervised => {}
        Mode::Labels => {
            if sup.labels.is_empty() {
                return Err(Error::Config("labels mode needs at least one labeled shape".into()));
            }
            out.class_names = sup.labels.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            if out.class_names.len() < 2 {
                return Err(Error::Config("labels mode needs at least two classes".into()));
            }
            for (id, class) in &sup.labels {
                let c = out.class_names.binary_search(class).unwrap();
                out.labels.insert(index(id)?, c);
            }
        }
        Mode::Triplets => {
            if sup.triplets.is_empty() {
                return Err(Error::Config("triplets mode needs at least one triplet".into()));
            }
            let mut ts = Vec::new();
            for [a, b, c] in &sup.triplets {
                ts.push([index(a)?, index(b)?, index(c)?]);
            }
            out.constraints = decompose_triplets(&ts);
            out.constraints.validate(prep.n_shapes())?;
        }
    }
    Ok(out)
}

/// Scales every column to unit length.
pub fn unit_columns(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        if n > 0.0 {
            c /= n;
        }
    }
    out
}

struct Clustering {
    assignment: Vec<usize>,
    clusters: usize,
    model: PslfModel,
}

fn cluster_once(prep: &Prepared, x: &[DMatrix<f64>], mode: Mode, res: &Resolved, cfg: &RunConfig, seed: u64) -> Result<Clustering> {
    let n = prep.n_shapes();
    let max_k = x.iter().map(|m| m.nrows()).min().unwrap_or(0);
    let pcfg = cfg.pslf(max_k, seed);
    match mode {
        Mode::Unsupervised => {
            let model = fit_unsupervised(x, &pcfg)?;
            let codes = unit_columns(&model.fused());
            let r = spectral_cluster_with(&codes, cfg.c_max, cfg.clusters, seed)?;
            Ok(Clustering { assignment: r.labels, clusters: r.clusters, model })
        }
        Mode::Triplets => {
            let model = fit_unsupervised(x, &pcfg)?;
            let codes = unit_columns(&model.fused());
            let sim = SimilarityMatrix::from_features(&codes);
            let c = match cfg.clusters {
                Some(c) => c,
                None => {
                    let d: Vec<f64> = sim.a.row_iter().map(|r| r.sum()).map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 }).collect();
                    let norm = DMatrix::from_fn(n, n, |i, j| sim.a[(i, j)] * d[i] * d[j]);
                    let mut ev: Vec<f64> = norm.symmetric_eigenvalues().iter().copied().collect();
                    ev.sort_by(|a, b| b.total_cmp(a));
                    eigengap_count(&ev, cfg.c_max)
                }
            }
            .clamp(2, n);
            let modified = apply_triplets(&sim, &res.constraints)?;
            let ind = symnmf_cluster(&modified, c, seed)?;
            let assignment = ind.labels;
            let clusters = assignment.iter().collect::<BTreeSet<_>>().len();
            Ok(Clustering { assignment, clusters, model })
        }
        Mode::Labels => {
            // labeled shapes first, each group in id order
            let labeled: Vec<usize> = res.labels.keys().copied().collect();
            let unlabeled: Vec<usize> = (0..n).filter(|i| !res.labels.contains_key(i)).collect();
            let order: Vec<usize> = labeled.iter().chain(&unlabeled).copied().collect();
            let xp: Vec<DMatrix<f64>> = x.iter().map(|m| m.select_columns(&order)).collect();
            let y = LabelMatrix::from_labels(&labeled.iter().map(|i| res.labels[i]).collect::<Vec<_>>(), res.class_names.len())?;
            let model = fit_labeled(&xp, &y, &pcfg)?;
            let fused = model.fused();
            let mut assignment = vec![0; n];
            for (k, &i) in labeled.iter().enumerate() {
                assignment[i] = res.labels[&i];
                debug_assert_eq!(order[k], i);
            }
            if !unlabeled.is_empty() {
                let nl = labeled.len();
                let vu = fused.columns(nl, unlabeled.len()).into_owned();
                let preds = match &model.w {
                    Some(w) => Some(predict_labels(w, &vu)?),
                    None => None,
                };
                let codes = unit_columns(&fused);
                for (k, &i) in unlabeled.iter().enumerate() {
                    let predicted = preds.as_ref().and_then(|p| p[k].label);
                    assignment[i] = predicted.unwrap_or_else(|| {
                        // no confident label: nearest labeled code
                        let col = codes.column(nl + k);
                        let best = (0..nl).max_by(|&a, &b| col.dot(&codes.column(a)).total_cmp(&col.dot(&codes.column(b))).then(b.cmp(&a)));
                        res.labels[&labeled[best.unwrap()]]
                    });
                }
            }
            let clusters = res.class_names.len();
            // reorder the model's columns back to shape order
            let mut inverse = vec![0; n];
            for (k, &i) in order.iter().enumerate() {
                inverse[i] = k;
            }
            let mut model = model;
            model.v_s = model.v_s.iter().map(|m| m.select_columns(&inverse)).collect();
            model.v_c = model.v_c.select_columns(&inverse);
            Ok(Clustering { assignment, clusters, model })
        }
    }
}

/// The cluster-and-select loop followed by densified backprojection.
pub fn run_analysis(
    prep: &Prepared,
    mode: Mode,
    sup: &Supervision,
    cfg: &RunConfig,
    truth: Option<&BTreeMap<String, String>>,
) -> Result<StyleResult> {
    cfg.validate()?;
    let n = prep.n_shapes();
    if n < 2 {
        return Err(Error::invalid("analysis needs at least two shapes"));
    }
    let res = resolve(prep, mode, sup)?;
    let views = prep.views;
    // positions into each view's initial bank
    let mut current: Vec<Vec<usize>> = prep.banks.iter().map(|b| (0..b.len()).collect()).collect();
    let global = |cur: &[Vec<usize>]| -> BTreeSet<usize> {
        cur.iter().enumerate().flat_map(|(v, c)| c.iter().map(move |&j| prep.banks[v][j])).collect()
    };
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut last: Option<(Clustering, Vec<Option<crate::patchbank::DiscriminantSelection>>)> = None;
    for it in 0..cfg.max_iterations {
        let active: Vec<usize> = (0..views).filter(|&v| !current[v].is_empty()).collect();
        let x: Vec<DMatrix<f64>> = active.iter().map(|&v| select_rows(&prep.encodings[v], &current[v])).collect();
        let seed = cfg.seed.wrapping_add(it as u64);
        let cl = cluster_once(prep, &x, mode, &res, cfg, seed)?;

        let mut next = current.clone();
        let mut selections = Vec::with_capacity(views);
        for v in 0..views {
            if prep.banks[v].is_empty() {
                selections.push(None);
                continue;
            }
            let sel = reselect_discriminant(&prep.support[v], &cl.assignment, cfg.mu)?;
            let positions: Vec<usize> = prep.banks[v]
                .iter()
                .enumerate()
                .filter(|(_, id)| sel.selected.contains(id))
                .map(|(j, _)| j)
                .collect();
            if !positions.is_empty() {
                next[v] = positions;
            }
            selections.push(Some(sel));
        }
        let before = global(&current);
        let after = global(&next);
        let churn = before.symmetric_difference(&after).count() as f64 / before.len().max(1) as f64;
        let same = trace.last().is_some_and(|r| same_partition(&r.assignment, &cl.assignment));
        trace.push(IterationRecord {
            iteration: it,
            assignment: cl.assignment.clone(),
            clusters: cl.clusters,
            k_size: before.len(),
            selected: after.len(),
            churn,
            objective: cl.model.final_objective(),
            pslf_iterations: cl.model.objective_trace.len() - 1,
        });
        log::info!(
            "iteration {it}: {} clusters, |K| {} -> {}, churn {churn:.3}, objective {:.4}",
            cl.clusters,
            before.len(),
            after.len(),
            cl.model.final_objective()
        );
        current = next;
        last = Some((cl, selections));
        if same && churn < cfg.churn_tol {
            converged = true;
            break;
        }
    }
    let (cl, selections) = last.expect("at least one iteration");

    let final_ids = global(&current);
    let mut owners: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for sel in selections.iter().flatten() {
        for (l, ids) in sel.per_cluster.iter().enumerate() {
            for &id in ids {
                owners.entry(id).or_default().insert(sel.clusters[l]);
            }
        }
    }
    let style_patches: Vec<StylePatch> = final_ids
        .iter()
        .map(|&id| {
            let p = &prep.patches[id];
            StylePatch {
                patch_id: id,
                shape_id: p.shape_id.clone(),
                seed_id: p.seed_id,
                view_index: p.view_index,
                rect: p.rect,
                clusters: owners.get(&id).map(|s| s.iter().copied().collect()).unwrap_or_default(),
            }
        })
        .collect();

    let shape_ids = prep.shape_ids();
    let purity = match truth {
        Some(t) => {
            let names: Vec<&String> = shape_ids
                .iter()
                .map(|id| t.get(id).ok_or_else(|| Error::Config(format!("ground truth lacks shape {id}"))))
                .collect::<Result<_>>()?;
            let dict: BTreeMap<&String, usize> = names.iter().copied().collect::<BTreeSet<_>>().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
            let truth_idx: Vec<usize> = names.iter().map(|s| dict[s]).collect();
            Some(purity(&cl.assignment, &truth_idx)?)
        }
        None => None,
    };
    let constraint_satisfaction = (mode == Mode::Triplets).then(|| res.constraints.satisfaction(&cl.assignment));
    let regions = backproject(prep, &final_ids, cfg.tau_b);
    Ok(StyleResult {
        mode,
        shape_ids,
        assignment: cl.assignment,
        clusters: cl.clusters,
        class_names: (mode == Mode::Labels).then(|| res.class_names.clone()),
        style_patches,
        iterations: trace,
        converged,
        n_labeled: res.labels.len(),
        constraint_satisfaction,
        purity,
        regions,
        model: cl.model,
    })
}

/// Patches around every densified seed of one shape, per view.
pub fn dense_patches(prep: &Prepared, shape: usize) -> Vec<Patch> {
    let s = &prep.shapes[shape];
    let mut out = Vec::new();
    for v in 0..prep.views {
        if let Ok(mut ps) = sample_view_patches(&s.images[v], &prep.maps[shape][v], &s.projected[v], prep.patch_size, out.len()) {
            out.append(&mut ps);
        }
    }
    out
}

pub(crate) fn unit_descriptor(m: &HogMap) -> Vec<f64> {
    let n = m.norm();
    if n > 0.0 { m.data.iter().map(|v| v / n).collect() } else { vec![0.0; m.data.len()] }
}

pub(crate) fn best_cosine(desc: &[f64], bank: &[Vec<f64>]) -> f64 {
    bank.iter()
        .map(|b| b.iter().zip(desc).map(|(x, y)| x * y).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Closest point to `p` on triangle `t`.
pub fn closest_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = t;
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Faces that come within the patch footprint radius of `seed`.
fn seed_region(prep: &Prepared, shape: usize, seed_id: usize, view: usize) -> Vec<usize> {
    let s = &prep.shapes[shape];
    let seed = s.seeds[seed_id].pos();
    let cam = &make_cameras(prep.views)[view];
    let proj = cam.projector(prep.image_size);
    let z = proj.project(&seed).z;
    let r = prep.patch_size as f64 / 2.0 * proj.pixel_footprint(z);
    (0..s.mesh.faces().len())
        .filter(|&f| (closest_on_triangle(&seed, &s.mesh.face_vertices(f)) - seed).norm() <= r)
        .collect()
}

/// Maps style patches to surface regions. A style patch marks the area
/// around its own seed; any densified patch of any shape whose descriptor
/// reaches cosine `tau_b` with a style patch of the same view marks the area
/// around its seed.
pub fn backproject(prep: &Prepared, style: &BTreeSet<usize>, tau_b: f64) -> Vec<StyleRegion> {
    let mut bank: Vec<Vec<Vec<f64>>> = vec![Vec::new(); prep.views];
    let mut owned: BTreeSet<(&str, usize, usize)> = BTreeSet::new();
    for &id in style {
        let p = &prep.patches[id];
        bank[p.view_index].push(unit_descriptor(&p.hog));
        owned.insert((p.shape_id.as_str(), p.seed_id, p.view_index));
    }
    (0..prep.n_shapes())
        .into_par_iter()
        .map(|s| {
            let shape = &prep.shapes[s];
            let mut region = StyleRegion { shape_id: shape.id.clone(), faces: BTreeMap::new(), seed_ids: BTreeSet::new() };
            let mut hits: BTreeSet<(usize, usize)> = owned
                .iter()
                .filter(|(sid, _, _)| *sid == shape.id)
                .map(|&(_, seed, view)| (seed, view))
                .collect();
            for p in dense_patches(prep, s) {
                let b = &bank[p.view_index];
                if !b.is_empty() && best_cosine(&unit_descriptor(&p.hog), b) >= tau_b {
                    hits.insert((p.seed_id, p.view_index));
                }
            }
            for (seed, view) in hits {
                region.seed_ids.insert(seed);
                for f in seed_region(prep, s, seed, view) {
                    *region.faces.entry(f).or_insert(0) += 1;
                }
            }
            region
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryIteration {
    pub iteration: usize,
    pub clusters: usize,
    pub k_size: usize,
    pub selected: usize,
    pub churn: f64,
    pub objective: f64,
    pub pslf_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub shapes: usize,
    pub clusters: usize,
    pub class_names: Option<Vec<String>>,
    pub n_labeled: usize,
    pub purity: Option<f64>,
    pub constraint_satisfaction: Option<f64>,
    pub converged: bool,
    pub style_patches: usize,
    pub view_weights: Vec<f64>,
    pub iterations: Vec<SummaryIteration>,
    pub assignment_hash: String,
    pub patch_set_hash: String,
}

impl StyleResult {
    pub fn summary(&self) -> Summary {
        Summary {
            mode: self.mode,
            shapes: self.shape_ids.len(),
            clusters: self.clusters,
            class_names: self.class_names.clone(),
            n_labeled: self.n_labeled,
            purity: self.purity,
            constraint_satisfaction: self.constraint_satisfaction,
            converged: self.converged,
            style_patches: self.style_patches.len(),
            view_weights: self.model.pi.clone(),
            iterations: self
                .iterations
                .iter()
                .map(|r| SummaryIteration {
                    iteration: r.iteration,
                    clusters: r.clusters,
                    k_size: r.k_size,
                    selected: r.selected,
                    churn: r.churn,
                    objective: r.objective,
                    pslf_iterations: r.pslf_iterations,
                })
                .collect(),
            assignment_hash: digest(assignment_csv(self).as_bytes()),
            patch_set_hash: digest(&serde_json::to_vec(&self.style_patch_ids()).expect("ids serialize")),
        }
    }
}

pub const SUMMARY_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "analysis summary",
  "type": "object",
  "required": ["mode", "shapes", "clusters", "class_names", "n_labeled", "purity", "constraint_satisfaction",
               "converged", "style_patches", "view_weights", "iterations", "assignment_hash", "patch_set_hash"],
  "additionalProperties": false,
  "properties": {
    "mode": {"enum": ["unsupervised", "labels", "triplets"]},
    "shapes": {"type": "integer", "minimum": 2},
    "clusters": {"type": "integer", "minimum": 1},
    "class_names": {"type": ["array", "null"], "items": {"type": "string"}},
    "n_labeled": {"type": "integer", "minimum": 0},
    "purity": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "constraint_satisfaction": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "converged": {"type": "boolean"},
    "style_patches": {"type": "integer", "minimum": 0},
    "view_weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
    "iterations": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["iteration", "clusters", "k_size", "selected", "churn", "objective", "pslf_iterations"],
        "additionalProperties": false,
        "properties": {
          "iteration": {"type": "integer", "minimum": 0},
          "clusters": {"type": "integer", "minimum": 1},
          "k_size": {"type": "integer", "minimum": 0},
          "selected": {"type": "integer", "minimum": 0},
          "churn": {"type": "number", "minimum": 0},
          "objective": {"type": "number"},
          "pslf_iterations": {"type": "integer", "minimum": 0}
        }
      }
    },
    "assignment_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
    "patch_set_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"}
  }
}
"#;

pub fn assignment_csv(result: &StyleResult) -> String {
    let mut s = String::from("shape_id,cluster\n");
    for (id, c) in result.shape_ids.iter().zip(&result.assignment) {
        match &result.class_names {
            Some(names) => s.push_str(&format!("{id},{}\n", names[*c])),
            None => s.push_str(&format!("{id},{c}\n")),
        }
    }
    s
}

/// Copy of `image` with each patch rectangle outlined.
pub fn annotate(image: &LineImage, rects: &[[usize; 4]]) -> LineImage {
    let mut out = image.clone();
    let n = out.size;
    for &[x, y, w, h] in rects {
        for k in 0..w {
            for yy in [y, y + h - 1] {
                if x + k < n && yy < n {
                    out.pixels[yy * n + x + k] = 0.5;
                }
            }
        }
        for k in 0..h {
            for xx in [x, x + w - 1] {
                if xx < n && y + k < n {
                    out.pixels[(y + k) * n + xx] = 0.5;
                }
            }
        }
    }
    out
}

fn write(path: &Path, bytes: &[u8], hashes: &mut BTreeMap<String, String>, root: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
    hashes.insert(rel, digest(bytes));
    Ok(())
}

/// Writes the run directory: assignment, regions, filter bank, summary and
/// its schema, PSLF model, annotated views and an artifact hash manifest.
pub fn export_result(result: &StyleResult, prep: &Prepared, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut hashes = BTreeMap::new();
    let root = out_dir;
    write(&out_dir.join("assignment.csv"), assignment_csv(result).as_bytes(), &mut hashes, root)?;

    for r in &result.regions {
        let mut s = String::from("face,score\n");
        for (f, score) in &r.faces {
            s.push_str(&format!("{f},{score}\n"));
        }
        write(&out_dir.join("regions").join(format!("{}.csv", r.shape_id)), s.as_bytes(), &mut hashes, root)?;
    }

    let bank_json = serde_json::to_vec_pretty(&result.style_patches)?;
    write(&out_dir.join("filter_bank.json"), &bank_json, &mut hashes, root)?;
    if let Some(first) = result.style_patches.first() {
        let dim = prep.patches[first.patch_id].hog.data.len();
        let m = DMatrix::from_fn(result.style_patches.len(), dim, |r, c| prep.patches[result.style_patches[r].patch_id].hog.data[c]);
        let path = out_dir.join("filter_bank.bin");
        crate::io::write_matrix(&path, &m)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hashes.insert("filter_bank.bin".into(), digest(&bytes));
    }

    let summary = serde_json::to_vec_pretty(&result.summary())?;
    write(&out_dir.join("summary.json"), &summary, &mut hashes, root)?;
    write(&out_dir.join("summary.schema.json"), SUMMARY_SCHEMA.as_bytes(), &mut hashes, root)?;

    let model_dir = out_dir.join("model");
    std::fs::create_dir_all(&model_dir).map_err(|e| Error::io(&model_dir, e))?;
    let mut mats: Vec<(String, &DMatrix<f64>)> = Vec::new();
    for (p, u) in result.model.u.iter().enumerate() {
        mats.push((format!("U_{p}.bin"), u));
    }
    for (p, v) in result.model.v_s.iter().enumerate() {
        mats.push((format!("Vs_{p}.bin"), v));
    }
    mats.push(("Vc.bin".into(), &result.model.v_c));
    if let Some(w) = &result.model.w {
        mats.push(("W.bin".into(), w));
    }
    for (name, m) in mats {
        let path = model_dir.join(&name);
        crate::io::write_matrix(&path, m)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hashes.insert(format!("model/{name}"), digest(&bytes));
    }
    let meta = serde_json::json!({ "config": result.model.config, "pi": result.model.pi, "n_labeled": result.model.n_labeled });
    write(&model_dir.join("model.json"), &serde_json::to_vec_pretty(&meta)?, &mut hashes, root)?;
    let mut trace = String::from("iteration,objective\n");
    for (i, o) in result.model.objective_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{o}\n"));
    }
    write(&model_dir.join("objective.csv"), trace.as_bytes(), &mut hashes, root)?;

    let mut by_image: BTreeMap<(String, usize), Vec<[usize; 4]>> = BTreeMap::new();
    for p in &result.style_patches {
        by_image.entry((p.shape_id.clone(), p.view_index)).or_default().push(p.rect);
    }
    for ((id, view), rects) in by_image {
        let s = prep.shape_index(&id).expect("patch shape exists");
        let img = annotate(&prep.shapes[s].images[view], &rects);
        write(&out_dir.join("annotated").join(img.file_name()), &img.to_pgm(), &mut hashes, root)?;
    }

    let manifest = serde_json::to_vec_pretty(&hashes)?;
    let path = out_dir.join("artifacts.json");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
