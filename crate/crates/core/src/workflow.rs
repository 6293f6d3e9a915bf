//! Collection-level commands shared by the command line and the bindings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::apps::{best_view, simplify, BestView, SimplifyConfig, SimplifyStats};
use crate::cache::{Lookup, RenderCache};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hog::{hog_image, HogMap};
use crate::io::{read_matrix, read_table, ConstraintFile, Manifest};
use crate::lineproj::ProjectedSeed;
use crate::mesh::load_mesh;
use crate::patchbank::{sample_view_patches, Patch};
use crate::pipeline::{export_result, prepare, render_shape, run_analysis, Mode, Prepared, RenderedShape, StyleRegion, StyleResult, Supervision};

/// Rendered shapes of a manifest plus the shapes that could not be loaded.
#[derive(Debug, Clone)]
pub struct Collection {
    pub shapes: Vec<RenderedShape>,
    /// `(shape id, reason)`
    pub failures: Vec<(String, String)>,
    pub rendered: usize,
    pub cache_hits: usize,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{what} is not set")))
}

pub fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    required(&cfg.output_dir, "output_dir")
}

/// Renders every manifest entry, through the cache when one is configured.
/// Unreadable meshes are reported, not fatal.
pub fn render_collection(cfg: &RunConfig) -> Result<Collection> {
    cfg.validate()?;
    let manifest = Manifest::read(required(&cfg.manifest, "manifest")?).map_err(|e| Error::Config(e.to_string()))?;
    let cache = cfg.cache_dir.as_ref().map(RenderCache::new);
    let results: Vec<(String, Result<(RenderedShape, Lookup)>)> = manifest
        .shapes
        .par_iter()
        .map(|e| {
            let r = match &cache {
                Some(c) => std::fs::read(&e.mesh).map_err(|err| Error::io(&e.mesh, err)).and_then(|b| c.render(&e.id, &b, cfg)),
                None => load_mesh(&e.mesh, &e.id).map(|m| (render_shape(&e.id, &m, cfg), Lookup::Rendered)),
            };
            (e.id.clone(), r)
        })
        .collect();
    let mut out = Collection { shapes: Vec::new(), failures: Vec::new(), rendered: 0, cache_hits: 0 };
    for (id, r) in results {
        match r {
            Ok((s, Lookup::Hit)) => {
                out.cache_hits += 1;
                out.shapes.push(s);
            }
            Ok((s, Lookup::Rendered)) => {
                out.rendered += 1;
                out.shapes.push(s);
            }
            Err(e) => {
                log::error!("{id}: {e}");
                out.failures.push((id, e.to_string()));
            }
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SeedSidecar<'a> {
    shape_id: &'a str,
    seeds: &'a [crate::mesh::SeedPoint],
    projected: &'a [ProjectedSeed],
}

/// `renders/<id>/<id>_v<k>.pgm` plus one seed sidecar per view, and a
/// `failures.csv` listing shapes that did not render.
pub fn write_renders(coll: &Collection, out_dir: &Path) -> Result<()> {
    for s in &coll.shapes {
        let dir = out_dir.join("renders").join(&s.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (img, proj) in s.images.iter().zip(&s.projected) {
            img.write_pgm(&dir.join(img.file_name()))?;
            let side = SeedSidecar { shape_id: &s.id, seeds: &s.seeds, projected: proj };
            let path = dir.join(format!("{}_v{}.seeds.json", s.id, img.view_index));
            std::fs::write(&path, serde_json::to_vec(&side)?).map_err(|e| Error::io(&path, e))?;
        }
    }
    let mut text = String::from("shape_id,error\n");
    for (id, e) in &coll.failures {
        text.push_str(&format!("{id},\"{}\"\n", e.replace('"', "'")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("failures.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(read_table(path)?.into_iter().collect())
}

pub fn supervision(cfg: &RunConfig, mode: Mode) -> Result<Supervision> {
    match (&cfg.constraints, mode) {
        (_, Mode::Unsupervised) => Ok(Supervision::default()),
        (Some(p), _) => Ok(ConstraintFile::read(p).map_err(|e| Error::Config(e.to_string()))?.into()),
        (None, _) => Err(Error::Config(format!("mode {mode:?} needs a constraints file"))),
    }
}

pub struct Analysis {
    pub collection: Collection,
    pub prepared: Prepared,
    pub result: StyleResult,
}

/// Render, prepare and analyze, writing the run directory when
/// `output_dir` is set.
pub fn analyze(cfg: &RunConfig, mode: Mode) -> Result<Analysis> {
    let sup = supervision(cfg, mode)?;
    let truth = cfg.truth.as_deref().map(read_truth).transpose()?;
    let collection = render_collection(cfg)?;
    let prepared = prepare(collection.shapes.clone(), cfg)?;
    let result = run_analysis(&prepared, mode, &sup, cfg, truth.as_ref())?;
    if let Some(dir) = &cfg.output_dir {
        export_result(&result, &prepared, dir)?;
    }
    Ok(Analysis { collection, prepared, result })
}

/// Reads `regions/<id>.csv` files from a run directory.
pub fn read_regions(run_dir: &Path) -> Result<BTreeMap<String, StyleRegion>> {
    let dir = run_dir.join("regions");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|_| path.extension().is_some_and(|e| e == "csv")) else {
            continue;
        };
        let mut faces = BTreeMap::new();
        for (f, score) in read_table(&path)? {
            let bad = || Error::parse(path.display().to_string(), format!("row {f},{score}"));
            faces.insert(f.parse::<usize>().map_err(|_| bad())?, score.parse::<u32>().map_err(|_| bad())?);
        }
        out.insert(id.to_string(), StyleRegion { shape_id: id.to_string(), faces, seed_ids: Default::default() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplifyRow {
    pub shape_id: String,
    pub stats: SimplifyStats,
}

/// Simplifies every analyzed shape into `out_dir/<id>.obj` and writes
/// `out_dir/stats.csv`.
pub fn simplify_collection(cfg: &RunConfig, run_dir: &Path, scfg: &SimplifyConfig, out_dir: &Path) -> Result<(Vec<SimplifyRow>, Vec<(String, String)>)> {
    let regions = read_regions(run_dir)?;
    let manifest = Manifest::read(required(&cfg.manifest, "manifest")?).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<(String, Result<SimplifyStats>)> = manifest
        .shapes
        .par_iter()
        .filter_map(|e| {
            let region = regions.get(&e.id)?;
            let r = load_mesh(&e.mesh, &e.id).and_then(|m| {
                let mut m = m.normalize_upright();
                m.shape_id = e.id.clone();
                let s = simplify(&m, region, scfg)?;
                s.mesh.write_obj(&out_dir.join(format!("{}.obj", e.id)))?;
                Ok(s.stats)
            });
            Some((e.id.clone(), r))
        })
        .collect();
    if results.is_empty() {
        return Err(Error::invalid(format!("no regions in {} match the manifest", run_dir.display())));
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut text = String::from("shape_id,faces_before,faces_after,style_faces_before,style_faces_after\n");
    for (id, r) in results {
        match r {
            Ok(st) => {
                text.push_str(&format!("{id},{},{},{},{}\n", st.faces_before, st.faces_after, st.style_faces_before, st.style_faces_after));
                rows.push(SimplifyRow { shape_id: id, stats: st });
            }
            Err(e) => {
                log::error!("{id}: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    let path = out_dir.join("stats.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok((rows, failures))
}

/// Analysis patches of one rendered shape.
pub fn shape_patches(shape: &RenderedShape, cfg: &RunConfig) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for (v, img) in shape.images.iter().enumerate() {
        let map = hog_image(img)?;
        let seeds: Vec<ProjectedSeed> = shape.projected[v].iter().filter(|p| p.seed_id < cfg.seeds).copied().collect();
        let mut ps = sample_view_patches(img, &map, &seeds, cfg.patch_size, out.len())?;
        out.append(&mut ps);
    }
    Ok(out)
}

/// Style descriptors stored in a run directory's `filter_bank.bin`.
pub fn read_style_bank(run_dir: &Path, cfg: &RunConfig) -> Result<Vec<HogMap>> {
    let path = run_dir.join("filter_bank.bin");
    if !path.is_file() {
        if run_dir.join("filter_bank.json").is_file() {
            return Ok(Vec::new());
        }
        return Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "missing run artifact")));
    }
    let m = read_matrix(&path)?;
    let cells = cfg.patch_size / crate::hog::CELL_SIZE;
    let template = HogMap::zeros(cells, cells);
    if m.ncols() != template.data.len() {
        return Err(Error::invalid(format!("filter bank has {} columns, expected {}", m.ncols(), template.data.len())));
    }
    Ok((0..m.nrows())
        .map(|r| HogMap { data: m.row(r).iter().copied().collect(), ..template.clone() })
        .collect())
}

/// Best view of every shape, written to `out` as
/// `shape_id,view_index,matches`.
pub fn bestview_collection(cfg: &RunConfig, run_dir: &Path, out: &Path) -> Result<(Vec<(String, BestView)>, Vec<(String, String)>)> {
    let bank = read_style_bank(run_dir, cfg)?;
    let coll = render_collection(cfg)?;
    let mut failures = coll.failures.clone();
    let results: Vec<(String, Result<BestView>)> = coll
        .shapes
        .par_iter()
        .map(|s| (s.id.clone(), shape_patches(s, cfg).and_then(|ps| best_view(&ps, &bank, cfg.views, cfg.tau_b))))
        .collect();
    let mut rows = Vec::new();
    let mut text = String::from("shape_id,view_index,matches\n");
    let mut sorted = results;
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, r) in sorted {
        match r {
            Ok(bv) => {
                text.push_str(&format!("{id},{},{}\n", bv.view_index, bv.counts[bv.view_index]));
                rows.push((id, bv));
            }
            Err(e) => {
                log::error!("{id}: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok((rows, failures))
}

/// Hash of everything an analysis run depends on: settings, mode and the
/// bytes of the manifest, meshes, constraints and truth files.
pub fn run_key(cfg: &RunConfig, mode: Mode) -> Result<String> {
    let mut c = cfg.clone();
    let (manifest, constraints, truth) = (c.manifest.take(), c.constraints.take(), c.truth.take());
    c.output_dir = None;
    c.cache_dir = None;
    let mut buf = serde_json::to_vec(&(&c, mode))?;
    fn add(buf: &mut Vec<u8>, p: &Path) -> Result<()> {
        buf.extend_from_slice(&std::fs::read(p).map_err(|e| Error::io(p, e))?);
        buf.push(0);
        Ok(())
    }
    let manifest = required(&manifest, "manifest")?;
    add(&mut buf, manifest)?;
    for e in Manifest::read(manifest)?.shapes {
        if add(&mut buf, &e.mesh).is_err() {
            buf.extend_from_slice(b"missing\0");
        }
    }
    if mode != Mode::Unsupervised {
        if let Some(p) = &constraints {
            add(&mut buf, p)?;
        }
    }
    if let Some(p) = &truth {
        add(&mut buf, p)?;
    }
    Ok(crate::config::digest(&buf))
}

pub const RUN_KEY_FILE: &str = "run_key";

/// The run directory holds the output of `key` with every artifact intact.
pub fn run_is_current(run_dir: &Path, key: &str) -> bool {
    let Ok(stored) = std::fs::read_to_string(run_dir.join(RUN_KEY_FILE)) else { return false };
    let Ok(text) = std::fs::read(run_dir.join("artifacts.json")) else { return false };
    let Ok(hashes) = serde_json::from_slice::<BTreeMap<String, String>>(&text) else { return false };
    stored.trim() == key
        && hashes.iter().all(|(rel, h)| std::fs::read(run_dir.join(rel)).is_ok_and(|b| crate::config::digest(&b) == *h))
}

pub fn write_run_key(run_dir: &Path, key: &str) -> Result<()> {
    let path = run_dir.join(RUN_KEY_FILE);
    std::fs::write(&path, format!("{key}\n")).map_err(|e| Error::io(&path, e))
}
