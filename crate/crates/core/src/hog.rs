//! HOG feature maps, sliding-window patch convolution in HOG space and
//! two-level spatial pyramid pooling.
//!
//! Each cell carries a 36-dimensional descriptor: the 9 orientation bins of
//! the cell as normalized within each of the four 2×2 blocks that contain it.
//! Blocks that reach past the image border see zero histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lineproj::LineImage;

pub const CELL_SIZE: usize = 8;
pub const BINS: usize = 9;
pub const DESC_LEN: usize = 4 * BINS;
pub const CLIP: f64 = 0.2;
const BLOCK_EPS: f64 = 1e-2;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogMap {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols * DESC_LEN` values, cell-major.
    pub data: Vec<f64>,
}

impl Default for HogMap {
    fn default() -> Self {
        HogMap::zeros(0, 0)
    }
}

impl HogMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        HogMap {
            rows,
            cols,
            data: vec![0.0; rows * cols * DESC_LEN],
        }
    }

    #[inline]
    pub fn cell(&self, r: usize, c: usize) -> &[f64] {
        let o = (r * self.cols + c) * DESC_LEN;
        &self.data[o..o + DESC_LEN]
    }

    #[inline]
    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let o = (r * self.cols + c) * DESC_LEN;
        &mut self.data[o..o + DESC_LEN]
    }

    /// Copy of the `h × w` cell window with top-left cell `(r0, c0)`.
    pub fn sub_map(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<HogMap> {
        if r0 + h > self.rows || c0 + w > self.cols {
            return Err(Error::invalid(format!(
                "window {h}x{w} at ({r0},{c0}) exceeds {}x{} map",
                self.rows, self.cols
            )));
        }
        let mut out = HogMap::zeros(h, w);
        for r in 0..h {
            for c in 0..w {
                out.cell_mut(r, c).copy_from_slice(self.cell(r0 + r, c0 + c));
            }
        }
        Ok(out)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity of the flattened descriptors; 0 when either is blank
    /// or shapes differ.
    pub fn cosine(&self, other: &HogMap) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return 0.0;
        }
        let (na, nb) = (self.norm(), other.norm());
        if na < ZERO_NORM || nb < ZERO_NORM {
            return 0.0;
        }
        dot(&self.data, &other.data) / (na * nb)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// HOG of a row-major grayscale image.
pub fn hog(pixels: &[f32], width: usize, height: usize) -> Result<HogMap> {
    let cols = width / CELL_SIZE;
    let rows = height / CELL_SIZE;
    if cols < 2 || rows < 2 {
        return Err(Error::invalid(format!(
            "image {width}x{height} is smaller than one {}px block",
            2 * CELL_SIZE
        )));
    }
    if pixels.len() != width * height {
        return Err(Error::invalid("pixel buffer does not match dimensions"));
    }
    let (w, h) = (cols * CELL_SIZE, rows * CELL_SIZE);
    let px = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        pixels[y * width + x] as f64
    };

    let mut hist = vec![0.0f64; rows * cols * BINS];
    let bin_width = 180.0 / BINS as f64;
    for y in 0..h {
        let fy = (y as f64 + 0.5) / CELL_SIZE as f64 - 0.5;
        let cy0 = fy.floor();
        let wy = fy - cy0;
        let cy0 = cy0 as isize;
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let b = theta / bin_width;
            let b0 = b.floor();
            let wb = b - b0;
            let bin0 = (b0 as usize) % BINS;
            let bin1 = (bin0 + 1) % BINS;

            let fx = (x as f64 + 0.5) / CELL_SIZE as f64 - 0.5;
            let cx0 = fx.floor();
            let wx = fx - cx0;
            let cx0 = cx0 as isize;
            for (dy, wyy) in [(0isize, 1.0 - wy), (1, wy)] {
                let cy = cy0 + dy;
                if cy < 0 || cy >= rows as isize || wyy == 0.0 {
                    continue;
                }
                for (dx, wxx) in [(0isize, 1.0 - wx), (1, wx)] {
                    let cx = cx0 + dx;
                    if cx < 0 || cx >= cols as isize || wxx == 0.0 {
                        continue;
                    }
                    let o = (cy as usize * cols + cx as usize) * BINS;
                    let v = mag * wyy * wxx;
                    hist[o + bin0] += v * (1.0 - wb);
                    hist[o + bin1] += v * wb;
                }
            }
        }
    }

    let cell_hist = |r: isize, c: isize| -> &[f64] {
        const ZERO: [f64; BINS] = [0.0; BINS];
        if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
            &ZERO
        } else {
            let o = (r as usize * cols + c as usize) * BINS;
            &hist[o..o + BINS]
        }
    };

    let mut map = HogMap::zeros(rows, cols);
    let mut block = [0.0f64; DESC_LEN];
    // blocks with top-left cell (by, bx), including the half-outside ring
    for by in -1..rows as isize {
        for bx in -1..cols as isize {
            for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                block[k * BINS..(k + 1) * BINS].copy_from_slice(cell_hist(by + dy, bx + dx));
            }
            l2_hys(&mut block);
            for (k, (dy, dx)) in [(0isize, 0isize), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let (r, c) = (by + dy, bx + dx);
                if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                    continue;
                }
                // context index: which block of the cell's four this is
                let ctx = (1 - dy as usize) * 2 + (1 - dx as usize);
                map.cell_mut(r as usize, c as usize)[ctx * BINS..(ctx + 1) * BINS]
                    .copy_from_slice(&block[k * BINS..(k + 1) * BINS]);
            }
        }
    }
    Ok(map)
}

fn l2_hys(v: &mut [f64]) {
    let n = (v.iter().map(|x| x * x).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
    for x in v.iter_mut() {
        *x = (*x / n).min(CLIP);
    }
    let n = (v.iter().map(|x| x * x).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

pub fn hog_image(image: &LineImage) -> Result<HogMap> {
    hog(&image.pixels, image.size, image.size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ActivationGrid {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Normalized filter ready for repeated convolution.
#[derive(Debug, Clone)]
pub struct PreparedFilter {
    rows: usize,
    cols: usize,
    /// (cell row, cell col, normalized descriptor) for non-blank cells.
    cells: Vec<(usize, usize, [f64; DESC_LEN])>,
    blank: bool,
}

impl PreparedFilter {
    pub fn new(filter: &HogMap) -> Self {
        let norm = filter.norm();
        let blank = norm < ZERO_NORM;
        let mut cells = Vec::new();
        if !blank {
            for r in 0..filter.rows {
                for c in 0..filter.cols {
                    let d = filter.cell(r, c);
                    if d.iter().any(|&v| v != 0.0) {
                        let mut out = [0.0; DESC_LEN];
                        for (o, v) in out.iter_mut().zip(d) {
                            *o = v / norm;
                        }
                        cells.push((r, c, out));
                    }
                }
            }
        }
        PreparedFilter {
            rows: filter.rows,
            cols: filter.cols,
            cells,
            blank,
        }
    }
}

/// Per-cell squared norms with a summed-area table for window norms.
pub struct PreparedImage<'a> {
    map: &'a HogMap,
    sat: Vec<f64>,
}

impl<'a> PreparedImage<'a> {
    pub fn new(map: &'a HogMap) -> Self {
        let (rows, cols) = (map.rows, map.cols);
        let mut sat = vec![0.0; (rows + 1) * (cols + 1)];
        for r in 0..rows {
            for c in 0..cols {
                let s: f64 = map.cell(r, c).iter().map(|v| v * v).sum();
                sat[(r + 1) * (cols + 1) + c + 1] =
                    s + sat[r * (cols + 1) + c + 1] + sat[(r + 1) * (cols + 1) + c] - sat[r * (cols + 1) + c];
            }
        }
        PreparedImage { map, sat }
    }

    fn window_norm2(&self, r0: usize, c0: usize, h: usize, w: usize) -> f64 {
        let s = self.map.cols + 1;
        let v = self.sat[(r0 + h) * s + c0 + w] - self.sat[r0 * s + c0 + w] - self.sat[(r0 + h) * s + c0]
            + self.sat[r0 * s + c0];
        v.max(0.0)
    }

    pub fn convolve(&self, filter: &PreparedFilter) -> Result<ActivationGrid> {
        let map = self.map;
        if filter.rows > map.rows || filter.cols > map.cols {
            return Err(Error::invalid(format!(
                "filter {}x{} larger than image map {}x{}",
                filter.rows, filter.cols, map.rows, map.cols
            )));
        }
        let rows = map.rows - filter.rows + 1;
        let cols = map.cols - filter.cols + 1;
        let mut values = vec![0.0; rows * cols];
        if filter.blank {
            return Ok(ActivationGrid { rows, cols, values });
        }
        for oy in 0..rows {
            for ox in 0..cols {
                let n2 = self.window_norm2(oy, ox, filter.rows, filter.cols);
                if n2 < ZERO_NORM * ZERO_NORM {
                    continue;
                }
                let mut acc = 0.0;
                for (r, c, d) in &filter.cells {
                    acc += dot(d, map.cell(oy + r, ox + c));
                }
                values[oy * cols + ox] = acc / n2.sqrt();
            }
        }
        Ok(ActivationGrid { rows, cols, values })
    }
}

/// Normalized cross-correlation of `filter_map` at every valid offset.
pub fn patch_convolve(image_map: &HogMap, filter_map: &HogMap) -> Result<ActivationGrid> {
    PreparedImage::new(image_map).convolve(&PreparedFilter::new(filter_map))
}

/// Max over the whole grid and over each quadrant (TL, TR, BL, BR), clamped
/// at zero. Odd sizes split with the larger half first.
pub fn pyramid_pool(grid: &ActivationGrid) -> [f64; 5] {
    let rh = grid.rows.div_ceil(2);
    let ch = grid.cols.div_ceil(2);
    let region_max = |r0: usize, r1: usize, c0: usize, c1: usize| -> f64 {
        let mut m = 0.0f64;
        for r in r0..r1 {
            for c in c0..c1 {
                m = m.max(grid.get(r, c));
            }
        }
        m
    };
    [
        region_max(0, grid.rows, 0, grid.cols),
        region_max(0, rh, 0, ch),
        region_max(0, rh, ch, grid.cols),
        region_max(rh, grid.rows, 0, ch),
        region_max(rh, grid.rows, ch, grid.cols),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFeature {
    pub shape_id: String,
    pub view_index: usize,
    pub vector: Vec<f64>,
    pub filter_ids: Vec<usize>,
}

/// Pooled responses of every filter over a precomputed image map.
pub fn encode_map(map: &HogMap, filters: &[PreparedFilter]) -> Result<Vec<f64>> {
    let img = PreparedImage::new(map);
    let mut out = Vec::with_capacity(5 * filters.len());
    for f in filters {
        out.extend_from_slice(&pyramid_pool(&img.convolve(f)?));
    }
    Ok(out)
}

pub fn encode_view(image: &LineImage, filters: &[HogMap], filter_ids: &[usize]) -> Result<ViewFeature> {
    if filters.is_empty() {
        return Err(Error::invalid("encode_view needs at least one filter"));
    }
    if filters.len() != filter_ids.len() {
        return Err(Error::invalid("filter ids do not match filters"));
    }
    let map = hog_image(image)?;
    let prepared: Vec<_> = filters.iter().map(PreparedFilter::new).collect();
    Ok(ViewFeature {
        shape_id: image.shape_id.clone(),
        view_index: image.view_index,
        vector: encode_map(&map, &prepared)?,
        filter_ids: filter_ids.to_vec(),
    })
}
