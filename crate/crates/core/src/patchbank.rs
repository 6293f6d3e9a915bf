//! Mid-level patches: sampling around projected seeds, k-means
//! pre-selection, the shape/patch support matrix and discriminative
//! re-selection against a clustering.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hog::{hog_image, HogMap, ViewFeature, CELL_SIZE};
use crate::kmeans::kmeans;
use crate::lineproj::{LineImage, ProjectedSeed};

pub const PATCH_SIZE: usize = 48;
/// Minimum fraction of inked pixels for a window to count as a patch.
pub const MIN_INK: f64 = 0.01;
pub const DEFAULT_MU: f64 = 0.07;
pub const DEFAULT_TAU_S: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub patch_id: usize,
    pub shape_id: String,
    pub seed_id: usize,
    pub view_index: usize,
    /// x, y, width, height in pixels; x and y are multiples of the cell size.
    pub rect: [usize; 4],
    /// Projected seed location the window was centered on.
    pub center: [f64; 2],
    #[serde(skip)]
    pub hog: HogMap,
}

/// One patch per visible projected seed, using the image's cell grid so the
/// patch descriptor is an exact sub-window of the image map.
pub fn sample_view_patches(
    image: &LineImage,
    image_map: &HogMap,
    seeds: &[ProjectedSeed],
    size: usize,
    first_id: usize,
) -> Result<Vec<Patch>> {
    if size == 0 || size % CELL_SIZE != 0 {
        return Err(Error::invalid(format!(
            "patch size {size} is not a multiple of {CELL_SIZE}"
        )));
    }
    let half = size as f64 / 2.0;
    let limit = (image.size - size) as f64;
    let cells = size / CELL_SIZE;
    let mut out = Vec::new();
    for s in seeds.iter().filter(|s| s.visible && s.view_index == image.view_index) {
        let (x, y) = (s.pixel[0] - half, s.pixel[1] - half);
        if !(0.0..=limit).contains(&x) || !(0.0..=limit).contains(&y) {
            continue;
        }
        let cx = (x / CELL_SIZE as f64).round() as usize;
        let cy = (y / CELL_SIZE as f64).round() as usize;
        let (x0, y0) = (cx * CELL_SIZE, cy * CELL_SIZE);
        let ink = (y0..y0 + size)
            .flat_map(|yy| (x0..x0 + size).map(move |xx| (xx, yy)))
            .filter(|&(xx, yy)| image.get(xx, yy) > 0.0)
            .count();
        if (ink as f64) < MIN_INK * (size * size) as f64 {
            continue;
        }
        out.push(Patch {
            patch_id: first_id + out.len(),
            shape_id: image.shape_id.clone(),
            seed_id: s.seed_id,
            view_index: image.view_index,
            rect: [x0, y0, size, size],
            center: s.pixel,
            hog: image_map.sub_map(cy, cx, cells, cells)?,
        });
    }
    Ok(out)
}

/// Patches for every image of one shape. Ids are sequential from zero.
pub fn sample_patches(images: &[LineImage], seeds: &[ProjectedSeed], size: usize) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for img in images {
        let map = hog_image(img)?;
        let mut ps = sample_view_patches(img, &map, seeds, size, out.len())?;
        out.append(&mut ps);
    }
    Ok(out)
}

/// Representatives of one view: the real patch nearest each k-means
/// centroid. Returns indices into `patches`, ascending.
pub fn preselect_kmeans(patches: &[&Patch], k: usize, rng_seed: u64) -> Vec<usize> {
    if patches.len() <= k {
        return (0..patches.len()).collect();
    }
    let dim = patches[0].hog.data.len();
    let data: Vec<f64> = patches.iter().flat_map(|p| p.hog.data.iter().copied()).collect();
    let km = kmeans(&data, dim, k, 100, rng_seed);
    let mut reps = BTreeSet::new();
    for c in 0..km.k {
        let centroid = km.centroid(c);
        let nearest = (0..patches.len())
            .filter(|&i| km.labels[i] == c)
            .map(|i| {
                let d: f64 = data[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = nearest {
            reps.insert(i);
        }
    }
    reps.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMatrix {
    pub shape_ids: Vec<String>,
    pub patch_ids: Vec<usize>,
    pub tau_s: f64,
    /// Row-major `shapes × patches` 0/1 entries.
    pub x: Vec<u8>,
}

impl SupportMatrix {
    pub fn from_rows(rows: &[Vec<u8>], tau_s: f64) -> Self {
        let n = rows.len();
        let np = rows.first().map_or(0, |r| r.len());
        SupportMatrix {
            shape_ids: (0..n).map(|i| format!("s{i}")).collect(),
            patch_ids: (0..np).collect(),
            tau_s,
            x: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn n_shapes(&self) -> usize {
        self.shape_ids.len()
    }

    pub fn n_patches(&self) -> usize {
        self.patch_ids.len()
    }

    #[inline]
    pub fn get(&self, shape: usize, patch: usize) -> u8 {
        self.x[shape * self.n_patches() + patch]
    }

    /// Sub-matrix restricted to the given column positions.
    pub fn columns(&self, cols: &[usize]) -> SupportMatrix {
        let np = self.n_patches();
        let x = (0..self.n_shapes())
            .flat_map(|i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.x[i * np + j])
            .collect();
        SupportMatrix {
            shape_ids: self.shape_ids.clone(),
            patch_ids: cols.iter().map(|&j| self.patch_ids[j]).collect(),
            tau_s: self.tau_s,
            x,
        }
    }
}

/// Shape `i` supports patch `j` when the whole-image pooled activation of
/// filter `j` on shape `i`, maximized over the views where the filter was
/// applied, reaches `tau_s`.
pub fn compute_support(
    features: &[ViewFeature],
    shape_ids: &[String],
    patch_ids: &[usize],
    tau_s: f64,
) -> Result<SupportMatrix> {
    let shape_pos: HashMap<&str, usize> = shape_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let patch_pos: HashMap<usize, usize> = patch_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let np = patch_ids.len();
    let mut best = vec![f64::NEG_INFINITY; shape_ids.len() * np];
    for f in features {
        let Some(&i) = shape_pos.get(f.shape_id.as_str()) else {
            return Err(Error::invalid(format!("feature for unknown shape {}", f.shape_id)));
        };
        if f.vector.len() != 5 * f.filter_ids.len() {
            return Err(Error::invalid("feature vector length is not 5 × filters"));
        }
        for (b, fid) in f.filter_ids.iter().enumerate() {
            if let Some(&j) = patch_pos.get(fid) {
                let v = &mut best[i * np + j];
                *v = v.max(f.vector[5 * b]);
            }
        }
    }
    Ok(SupportMatrix {
        shape_ids: shape_ids.to_vec(),
        patch_ids: patch_ids.to_vec(),
        tau_s,
        x: best.iter().map(|&v| u8::from(v >= tau_s)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantSelection {
    pub mu: f64,
    /// Cluster labels in ascending order; row `l` of the tables refers to `clusters[l]`.
    pub clusters: Vec<usize>,
    /// Selected patch ids per cluster.
    pub per_cluster: Vec<Vec<usize>>,
    /// `C × N_p` discriminant scores.
    pub scores: Vec<Vec<f64>>,
    pub thresholds: Vec<f64>,
    /// `C × N` support weights.
    pub weights: Vec<Vec<f64>>,
    /// Union over clusters.
    pub selected: BTreeSet<usize>,
}

/// Patches whose weighted support is concentrated in one cluster:
/// `delta_lj = |sum_i w_li (2 x_ij - 1)|` with `w_li = [i in l]/C - 1/N_p`,
/// kept when `delta_lj > mu N_p / C`.
pub fn reselect_discriminant(support: &SupportMatrix, clusters: &[usize], mu: f64) -> Result<DiscriminantSelection> {
    let n = support.n_shapes();
    if clusters.len() != n {
        return Err(Error::invalid("cluster assignment does not cover every shape"));
    }
    let labels: Vec<usize> = clusters.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let c = labels.len();
    if c == 0 {
        return Err(Error::invalid("no clusters"));
    }
    let np = support.n_patches();
    if np == 0 {
        return Err(Error::invalid("no patches"));
    }
    let pos: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let (cf, npf) = (c as f64, np as f64);
    let threshold = mu * npf / cf;
    let mut out = DiscriminantSelection {
        mu,
        clusters: labels.clone(),
        per_cluster: vec![Vec::new(); c],
        scores: vec![vec![0.0; np]; c],
        thresholds: vec![threshold; c],
        weights: vec![vec![0.0; n]; c],
        selected: BTreeSet::new(),
    };
    for l in 0..c {
        for i in 0..n {
            let member = pos[&clusters[i]] == l;
            out.weights[l][i] = f64::from(u8::from(member)) / cf - 1.0 / npf;
        }
        for j in 0..np {
            let s: f64 = (0..n)
                .map(|i| out.weights[l][i] * (2.0 * support.get(i, j) as f64 - 1.0))
                .sum();
            let delta = s.abs();
            out.scores[l][j] = delta;
            if delta > threshold {
                out.per_cluster[l].push(support.patch_ids[j]);
                out.selected.insert(support.patch_ids[j]);
            }
        }
    }
    Ok(out)
}
