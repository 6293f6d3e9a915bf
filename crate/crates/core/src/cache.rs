//! Content-addressed store of rendered shapes, keyed by the mesh bytes, the
//! shape id and the render settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{digest, RunConfig};
use crate::error::{Error, Result};
use crate::lineproj::{LineImage, ProjectedSeed};
use crate::mesh::{parse_obj, SeedPoint};
use crate::pipeline::{render_shape, RenderedShape};

#[derive(Debug, Clone)]
pub struct RenderCache {
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    id: String,
    views: usize,
    size: usize,
    seeds: Vec<SeedPoint>,
    projected: Vec<Vec<ProjectedSeed>>,
}

/// Outcome of a cached render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Rendered,
}

pub fn render_key(id: &str, mesh_bytes: &[u8], cfg: &RunConfig) -> String {
    let mut buf = Vec::with_capacity(mesh_bytes.len() + 128);
    buf.extend_from_slice(cfg.render_key().as_bytes());
    buf.push(0);
    buf.extend_from_slice(id.as_bytes());
    buf.push(0);
    buf.extend_from_slice(mesh_bytes);
    digest(&buf)
}

impl RenderCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RenderCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_dir(&self, key: &str) -> PathBuf {
        self.root.join("render").join(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entry_dir(key).join("seeds.json").is_file() && self.entry_dir(key).join("views.bin").is_file()
    }

    /// Renders the OBJ text `mesh_bytes` unless an entry already exists.
    pub fn render(&self, id: &str, mesh_bytes: &[u8], cfg: &RunConfig) -> Result<(RenderedShape, Lookup)> {
        let key = render_key(id, mesh_bytes, cfg);
        let text = std::str::from_utf8(mesh_bytes).map_err(|e| Error::parse(format!("mesh {id}"), e.to_string()))?;
        let mesh = parse_obj(text, id)?;
        if self.contains(&key) {
            match self.load(&key, id, &mesh) {
                Ok(r) => return Ok((r, Lookup::Hit)),
                Err(e) => log::warn!("{id}: ignoring unreadable cache entry {key}: {e}"),
            }
        }
        let r = render_shape(id, &mesh, cfg);
        self.store(&key, &r)?;
        Ok((r, Lookup::Rendered))
    }

    fn store(&self, key: &str, r: &RenderedShape) -> Result<()> {
        let dir = self.entry_dir(key);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let size = r.images.first().map_or(0, |i| i.size);
        let mut bin = Vec::with_capacity(r.images.len() * size * size * 4);
        for img in &r.images {
            for p in &img.pixels {
                bin.extend_from_slice(&p.to_le_bytes());
            }
        }
        let side = Sidecar {
            id: r.id.clone(),
            views: r.images.len(),
            size,
            seeds: r.seeds.clone(),
            projected: r.projected.clone(),
        };
        // views first so a partial entry never looks complete
        let views = dir.join("views.bin");
        std::fs::write(&views, bin).map_err(|e| Error::io(&views, e))?;
        let seeds = dir.join("seeds.json");
        std::fs::write(&seeds, serde_json::to_vec(&side)?).map_err(|e| Error::io(&seeds, e))?;
        Ok(())
    }

    fn load(&self, key: &str, id: &str, mesh: &crate::mesh::TriMesh) -> Result<RenderedShape> {
        let dir = self.entry_dir(key);
        let seeds = dir.join("seeds.json");
        let text = std::fs::read(&seeds).map_err(|e| Error::io(&seeds, e))?;
        let side: Sidecar = serde_json::from_slice(&text)?;
        let views = dir.join("views.bin");
        let bin = std::fs::read(&views).map_err(|e| Error::io(&views, e))?;
        let px = side.size * side.size;
        if side.id != id || bin.len() != side.views * px * 4 {
            return Err(Error::parse("render cache", format!("entry {key} does not match {id}")));
        }
        let images = (0..side.views)
            .map(|v| {
                let mut img = LineImage::blank(id, v, side.size);
                for (k, c) in bin[v * px * 4..(v + 1) * px * 4].chunks_exact(4).enumerate() {
                    img.pixels[k] = f32::from_le_bytes(c.try_into().unwrap());
                }
                img
            })
            .collect();
        let mut mesh = mesh.normalize_upright();
        mesh.shape_id = id.to_string();
        Ok(RenderedShape { id: id.to_string(), mesh, seeds: side.seeds, images, projected: side.projected })
    }
}
