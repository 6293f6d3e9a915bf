//! Style clustering: self-tuning spectral clustering, similarity
//! modification from relative constraints, symmetric tri-factorization and
//! cluster purity.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::kmeans_restarts;

pub const LOCAL_SCALE_NEIGHBOR: usize = 7;
pub const DEFAULT_C_MAX: usize = 12;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilaritySource {
    Gram,
    Modified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub a: DMatrix<f64>,
    pub source: SimilaritySource,
}

impl SimilarityMatrix {
    /// `A = V^T V` scaled so its largest entry is 1.
    pub fn from_features(v: &DMatrix<f64>) -> Self {
        let mut a = v.transpose() * v;
        let max = a.max();
        if max > 0.0 {
            a /= max;
        }
        SimilarityMatrix { a, source: SimilaritySource::Gram }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a <= b { (a, b) } else { (b, a) }
}

/// Pairwise constraints over shape indices; pairs are stored with the
/// smaller index first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub must_links: BTreeSet<(usize, usize)>,
    pub cannot_links: BTreeSet<(usize, usize)>,
    pub triplets: Vec<[usize; 3]>,
    /// Pairs dropped because must and cannot votes tied.
    pub dropped: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn add_must(&mut self, a: usize, b: usize) {
        self.must_links.insert(ordered(a, b));
    }

    pub fn add_cannot(&mut self, a: usize, b: usize) {
        self.cannot_links.insert(ordered(a, b));
    }

    pub fn is_empty(&self) -> bool {
        self.must_links.is_empty() && self.cannot_links.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(&(a, b)) = self.must_links.intersection(&self.cannot_links).next() {
            return Err(Error::ConflictingConstraint(a, b));
        }
        for &(a, b) in self.must_links.iter().chain(&self.cannot_links) {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("constraint ({a}, {b}) references an unknown shape")));
            }
        }
        Ok(())
    }

    /// Fraction of constraints honored by a hard assignment.
    pub fn satisfaction(&self, labels: &[usize]) -> f64 {
        let total = self.must_links.len() + self.cannot_links.len();
        if total == 0 {
            return 1.0;
        }
        let ok = self.must_links.iter().filter(|&&(a, b)| labels[a] == labels[b]).count()
            + self.cannot_links.iter().filter(|&&(a, b)| labels[a] != labels[b]).count();
        ok as f64 / total as f64
    }
}

/// `(a, b, c)`: `a` is closer in style to `b` than to `c`. Each triplet
/// votes must-link `(a, b)` and cannot-link `(a, c)`; a pair keeps the
/// majority vote and is dropped on a tie.
pub fn decompose_triplets(triplets: &[[usize; 3]]) -> ConstraintSet {
    let unique: BTreeSet<[usize; 3]> = triplets.iter().copied().collect();
    let mut votes: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for t in &unique {
        votes.entry(ordered(t[0], t[1])).or_default().0 += 1;
        votes.entry(ordered(t[0], t[2])).or_default().1 += 1;
    }
    let mut set = ConstraintSet { triplets: unique.into_iter().collect(), ..ConstraintSet::default() };
    for (pair, (must, cannot)) in votes {
        match must.cmp(&cannot) {
            std::cmp::Ordering::Greater => {
                set.must_links.insert(pair);
            }
            std::cmp::Ordering::Less => {
                set.cannot_links.insert(pair);
            }
            std::cmp::Ordering::Equal => {
                log::warn!("pair ({}, {}) has {must} must and {cannot} cannot votes; dropped", pair.0, pair.1);
                set.dropped.push(pair);
            }
        }
    }
    set
}

/// `A' = A + N_m - N_c`, clamped to `[0, 2]`.
pub fn apply_triplets(a: &SimilarityMatrix, constraints: &ConstraintSet) -> Result<SimilarityMatrix> {
    constraints.validate(a.len())?;
    let mut out = a.a.clone();
    for &(i, j) in &constraints.must_links {
        out[(i, j)] += 1.0;
        if i != j {
            out[(j, i)] += 1.0;
        }
    }
    for &(i, j) in &constraints.cannot_links {
        out[(i, j)] -= 1.0;
        if i != j {
            out[(j, i)] -= 1.0;
        }
    }
    out.apply(|v| *v = v.clamp(0.0, 2.0));
    Ok(SimilarityMatrix { a: out, source: SimilaritySource::Modified })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    pub clusters: usize,
    /// Eigenvalues of the normalized affinity, descending.
    pub eigenvalues: Vec<f64>,
}

fn pairwise_sq_dists(v: &DMatrix<f64>) -> DMatrix<f64> {
    let g = v.transpose() * v;
    let n = g.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0) })
}

/// Locally scaled affinity with a zero diagonal.
pub fn local_scale_affinity(v: &DMatrix<f64>) -> DMatrix<f64> {
    let d2 = pairwise_sq_dists(v);
    let n = d2.nrows();
    let sigma: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d2[(i, j)]).collect();
            row.sort_by(f64::total_cmp);
            let k = LOCAL_SCALE_NEIGHBOR.min(row.len());
            if k == 0 { 0.0 } else { row[k - 1].sqrt() }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let s = sigma[i] * sigma[j];
        if s > 0.0 {
            (-d2[(i, j)] / s).exp()
        } else if d2[(i, j)] == 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// `D^{-1/2} A D^{-1/2}`; isolated rows stay zero.
fn normalized_affinity(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = a.row_iter().map(|r| r.sum()).map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 }).collect();
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[i] * d[j])
}

/// Number of clusters at the largest gap among the leading `c_max`
/// eigenvalues (sorted descending).
pub fn eigengap_count(eigenvalues: &[f64], c_max: usize) -> usize {
    let m = c_max.min(eigenvalues.len());
    let mut best = (1, f64::NEG_INFINITY);
    for c in 1..m {
        let gap = eigenvalues[c - 1] - eigenvalues[c];
        if gap > best.1 + 1e-12 {
            best = (c, gap);
        }
    }
    best.0
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// Self-tuning spectral clustering of the columns of `v`. With
/// `clusters = Some(c)` the eigengap choice is skipped.
pub fn spectral_cluster_with(v: &DMatrix<f64>, c_max: usize, clusters: Option<usize>, seed: u64) -> Result<SpectralResult> {
    let n = v.ncols();
    if n < 2 {
        return Err(Error::invalid("spectral clustering needs at least two shapes"));
    }
    let l = normalized_affinity(&local_scale_affinity(v));
    let (values, vectors) = sorted_eigen(l);
    let c = clusters.unwrap_or_else(|| eigengap_count(&values, c_max.max(2))).clamp(1, n);
    if c == 1 {
        return Ok(SpectralResult { labels: vec![0; n], clusters: 1, eigenvalues: values });
    }
    let mut emb = Vec::with_capacity(n * c);
    for i in 0..n {
        let row: Vec<f64> = (0..c).map(|k| vectors[(i, k)]).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        emb.extend(row.iter().map(|x| if norm > 0.0 { x / norm } else { 0.0 }));
    }
    let km = kmeans_restarts(&emb, c, c, 300, 10, seed);
    Ok(SpectralResult { labels: canonical_labels(&km.labels), clusters: c, eigenvalues: values })
}

pub fn spectral_cluster(v: &DMatrix<f64>, c_max: usize, seed: u64) -> Result<SpectralResult> {
    spectral_cluster_with(v, c_max, None, seed)
}

/// Relabels so clusters are numbered by first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ClusterIndicator {
    pub y: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub objective_trace: Vec<f64>,
}

fn tri_objective(a: &DMatrix<f64>, y: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (a - y * s * y.transpose()).norm_squared()
}

fn row_argmax(y: &DMatrix<f64>) -> Vec<usize> {
    y.row_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SymNmfOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for SymNmfOptions {
    fn default() -> Self {
        SymNmfOptions { max_iters: 500, tol: 1e-7, restarts: 5 }
    }
}

fn symnmf_once(a: &DMatrix<f64>, c: usize, opts: &SymNmfOptions, rng: &mut ChaCha8Rng) -> ClusterIndicator {
    let n = a.nrows();
    let scale = (a.mean().max(EPS) / c as f64).sqrt();
    let mut y = DMatrix::from_fn(n, c, |_, _| rng.random::<f64>() * scale + EPS);
    let mut s = DMatrix::identity(c, c);
    let mut trace = vec![tri_objective(a, &y, &s)];
    for _ in 0..opts.max_iters {
        // S: Lee–Seung step on a quadratic with non-negative Hessian
        let yty = y.transpose() * &y;
        let num = y.transpose() * a * &y;
        let den = &yty * &s * &yty;
        s.zip_zip_apply(&num, &den, |v, p, q| *v *= (p + EPS) / (q + EPS));

        // Y: quarter-power step, damped until the objective does not rise
        let ays = a * &y * &s;
        let den = &y * (y.transpose() * &ays);
        let ratio = ays.zip_map(&den, |p, q| (p + EPS) / (q + EPS));
        let before = tri_objective(a, &y, &s);
        let mut t = 0.25;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = y.zip_map(&ratio, |v, r| v * r.powf(t));
            if tri_objective(a, &cand, &s) <= before {
                y = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let obj = tri_objective(a, &y, &s);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if !accepted || (prev - obj).abs() <= opts.tol * prev.max(EPS) {
            break;
        }
    }
    let labels = row_argmax(&y);
    ClusterIndicator { y, s, labels, objective_trace: trace }
}

/// `min ||A' - Y S Y^T||_F^2` over non-negative `Y` (N×C) and `S` (C×C).
pub fn symnmf_cluster_with(a: &SimilarityMatrix, c: usize, seed: u64, opts: &SymNmfOptions) -> Result<ClusterIndicator> {
    if c < 2 {
        return Err(Error::invalid("symmetric factorization needs C >= 2"));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty similarity matrix"));
    }
    if a.a.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("similarity has negative entries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..opts.restarts.max(1))
        .map(|_| symnmf_once(&a.a, c, opts, &mut rng))
        .min_by(|x, y| x.objective_trace.last().unwrap().total_cmp(y.objective_trace.last().unwrap()))
        .unwrap())
}

pub fn symnmf_cluster(a: &SimilarityMatrix, c: usize, seed: u64) -> Result<ClusterIndicator> {
    symnmf_cluster_with(a, c, seed, &SymNmfOptions::default())
}

/// Weighted precision: `sum_c |c|/N * max_l |c ∩ l| / |c|`.
pub fn purity(assignment: &[usize], truth: &[usize]) -> Result<f64> {
    if assignment.is_empty() {
        return Err(Error::invalid("empty clustering"));
    }
    if assignment.len() != truth.len() {
        return Err(Error::invalid("assignment and ground truth cover different shape sets"));
    }
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&c, &l) in assignment.iter().zip(truth) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let hit: usize = table.values().map(|row| row.values().copied().max().unwrap_or(0)).sum();
    Ok(hit as f64 / assignment.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(rng: &mut ChaCha8Rng, per: usize, sep: f64) -> DMatrix<f64> {
        DMatrix::from_fn(3, 2 * per, |r, j| {
            let offset = if j >= per && r == 0 { sep } else { 0.0 };
            offset + rng.random::<f64>()
        })
    }

    #[test]
    fn purity_examples() {
        let truth = [0, 0, 1, 1, 2];
        assert_eq!(purity(&truth, &truth).unwrap(), 1.0);
        // {a,b,c},{d,e} vs {a,b,d},{c,e}
        let p = purity(&[0, 0, 0, 1, 1], &[0, 0, 1, 0, 1]).unwrap();
        assert!((p - 0.6).abs() < 1e-12);
        assert_eq!(purity(&[0, 1, 2, 3, 4], &[0, 0, 0, 1, 1]).unwrap(), 1.0);
        assert!(purity(&[], &[]).is_err());
        assert!(purity(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn purity_random_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let mean = (0..1000)
            .map(|_| {
                let a: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
                purity(&a, &truth).unwrap()
            })
            .sum::<f64>()
            / 1000.0;
        assert!(mean >= 0.25, "{mean}");
    }

    #[test]
    fn triplet_decomposition() {
        let s = decompose_triplets(&[[1, 2, 3]]);
        assert_eq!(s.must_links, BTreeSet::from([(1, 2)]));
        assert_eq!(s.cannot_links, BTreeSet::from([(1, 3)]));

        let s = decompose_triplets(&[[1, 2, 3], [3, 2, 1]]);
        assert!(s.cannot_links.contains(&(1, 3)));
        assert!(!s.must_links.contains(&(1, 3)));

        let s = decompose_triplets(&[[1, 2, 3], [1, 3, 2]]);
        assert!(s.is_empty());
        assert_eq!(s.dropped, vec![(1, 2), (1, 3)]);

        let s = decompose_triplets(&[[1, 2, 3], [1, 2, 3]]);
        assert_eq!(s.triplets.len(), 1);
    }

    #[test]
    fn constraint_application() {
        let mut a = DMatrix::from_element(3, 3, 0.3);
        a.fill_diagonal(1.0);
        let sim = SimilarityMatrix { a, source: SimilaritySource::Gram };
        assert_eq!(apply_triplets(&sim, &ConstraintSet::default()).unwrap().a, sim.a);
        let mut cs = ConstraintSet::default();
        cs.add_must(0, 1);
        cs.add_cannot(2, 0);
        let out = apply_triplets(&sim, &cs).unwrap();
        assert!((out.a[(0, 1)] - 1.3).abs() < 1e-12 && (out.a[(1, 0)] - 1.3).abs() < 1e-12);
        assert_eq!(out.a[(0, 2)], 0.0);
        assert_eq!(out.a[(2, 0)], 0.0);
        assert_eq!(out.source, SimilaritySource::Modified);
        cs.add_must(0, 2);
        assert!(matches!(apply_triplets(&sim, &cs), Err(Error::ConflictingConstraint(0, 2))));
        let mut far = ConstraintSet::default();
        far.add_must(0, 9);
        assert!(apply_triplets(&sim, &far).is_err());
    }

    #[test]
    fn gram_similarity_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = DMatrix::from_fn(5, 8, |_, _| rng.random::<f64>());
        let s = SimilarityMatrix::from_features(&v);
        assert!((s.a.max() - 1.0).abs() < 1e-12);
        assert!((&s.a - s.a.transpose()).amax() < 1e-9);
        let diag = s.a.diagonal().max();
        let off = (0..8).flat_map(|i| (0..8).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| s.a[(i, j)]).fold(0.0, f64::max);
        assert!(diag >= off);
    }

    fn ncut(a: &DMatrix<f64>, side: &[bool]) -> f64 {
        let n = side.len();
        let (mut cut, mut vol) = (0.0, [0.0, 0.0]);
        for i in 0..n {
            for j in 0..n {
                vol[usize::from(side[i])] += a[(i, j)];
                if side[i] != side[j] {
                    cut += a[(i, j)];
                }
            }
        }
        cut / 2.0 * (1.0 / vol[0] + 1.0 / vol[1])
    }

    #[test]
    fn two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = blobs(&mut rng, 20, 100.0);
        let r = spectral_cluster(&v, 12, 0).unwrap();
        assert_eq!(r.clusters, 2);
        assert!(r.labels[..20].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[20..].iter().all(|&l| l != r.labels[0]));

        // 8-point subsample: the blob split is the minimum normalized cut
        let idx: Vec<usize> = (0..4).chain(20..24).collect();
        let sub = v.select_columns(&idx);
        let aff = local_scale_affinity(&sub);
        let blob_side: Vec<bool> = (0..8).map(|i| i >= 4).collect();
        let blob_cost = ncut(&aff, &blob_side);
        for mask in 1u32..(1 << 7) {
            let side: Vec<bool> = (0..8).map(|i| i > 0 && mask >> (i - 1) & 1 == 1).collect();
            if side == blob_side {
                continue;
            }
            assert!(ncut(&aff, &side) >= blob_cost);
        }
        let rs = spectral_cluster_with(&sub, 12, Some(2), 0).unwrap();
        assert_eq!(rs.labels, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn identical_points_single_cluster() {
        let v = DMatrix::from_element(4, 10, 0.5);
        let r = spectral_cluster(&v, 12, 0).unwrap();
        assert_eq!(r.clusters, 1);
        assert!(r.labels.iter().all(|&l| l == 0));
        assert!(spectral_cluster(&DMatrix::from_element(4, 1, 0.5), 12, 0).is_err());
    }

    #[test]
    fn spectral_deterministic_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = DMatrix::from_fn(6, 30, |_, _| rng.random::<f64>());
        let a = spectral_cluster(&v, 12, 4).unwrap();
        let b = spectral_cluster(&v, 12, 4).unwrap();
        assert_eq!(a, b);
        let scaled = spectral_cluster(&(&v * 37.5), 12, 4).unwrap();
        assert_eq!(a.labels, scaled.labels);
    }

    #[test]
    fn eigengap_choice() {
        assert_eq!(eigengap_count(&[1.0, 1.0, 0.9, 0.2, 0.1], 12), 3);
        assert_eq!(eigengap_count(&[1.0, 0.1, 0.05], 12), 1);
        assert_eq!(eigengap_count(&[1.0, 0.99, 0.98, 0.0], 3), 1);
    }

    fn block_diag(sizes: &[usize]) -> DMatrix<f64> {
        let n = sizes.iter().sum();
        let owner: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
        DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(owner[i] == owner[j])))
    }

    #[test]
    fn symnmf_block_diagonal() {
        let a = SimilarityMatrix { a: block_diag(&[6, 9]), source: SimilaritySource::Modified };
        let r = symnmf_cluster(&a, 2, 1).unwrap();
        assert!(r.labels[..6].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[6..].iter().all(|&l| l != r.labels[0]));
        assert!(symnmf_cluster(&a, 1, 1).is_err());
    }

    #[test]
    fn symnmf_identity() {
        let n = 6;
        let a = SimilarityMatrix { a: DMatrix::identity(n, n), source: SimilaritySource::Modified };
        let opts = SymNmfOptions { max_iters: 5000, tol: 0.0, restarts: 3 };
        let r = symnmf_cluster_with(&a, n, 2, &opts).unwrap();
        assert!(*r.objective_trace.last().unwrap() < 1e-3, "{:?}", r.objective_trace.last());
        let mut seen = r.labels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), n);
    }

    #[test]
    fn symnmf_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let opts = SymNmfOptions { max_iters: 60, tol: 0.0, restarts: 1 };
        for _ in 0..200 {
            let n = rng.random_range(4..20);
            let c = rng.random_range(2..5);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let a = SimilarityMatrix { a: (&m + m.transpose()) * 0.5, source: SimilaritySource::Modified };
            let r = symnmf_cluster_with(&a, c, rng.random(), &opts).unwrap();
            for w in r.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
            assert!(r.y.iter().all(|&v| v >= 0.0) && r.s.iter().all(|&v| v >= 0.0));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn purity_relabel_invariant(
                pairs in prop::collection::vec((0usize..5, 0usize..4), 1..40),
                shift_a in 1usize..20,
                shift_b in 1usize..20,
            ) {
                let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let t: Vec<usize> = pairs.iter().map(|p| p.1).collect();
                let a2: Vec<usize> = a.iter().map(|x| (x * 7 + shift_a) % 101).collect();
                let t2: Vec<usize> = t.iter().map(|x| (x * 3 + shift_b) % 53).collect();
                let p = purity(&a, &t).unwrap();
                prop_assert!((p - purity(&a2, &t2).unwrap()).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

            #[test]
            fn constraints_mostly_satisfied(seed in any::<u64>(), density in 0.01f64..0.10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sizes = [8usize, 8, 8];
                let n: usize = sizes.iter().sum();
                let owner: Vec<usize> = (0..n).map(|i| i / 8).collect();
                let mut a = block_diag(&sizes) * 0.6;
                for i in 0..n {
                    for j in 0..i {
                        let noise = 0.3 * rng.random::<f64>();
                        a[(i, j)] += noise;
                        a[(j, i)] += noise;
                    }
                }
                let max = a.max();
                a /= max;
                let mut cs = ConstraintSet::default();
                for i in 0..n {
                    for j in 0..i {
                        if rng.random::<f64>() < density {
                            if owner[i] == owner[j] { cs.add_must(i, j) } else { cs.add_cannot(i, j) }
                        }
                    }
                }
                let sim = SimilarityMatrix { a, source: SimilaritySource::Gram };
                let modified = apply_triplets(&sim, &cs).unwrap();
                let r = symnmf_cluster(&modified, 3, seed).unwrap();
                prop_assert!(cs.satisfaction(&r.labels) >= 0.9, "{}", cs.satisfaction(&r.labels));
            }
        }
    }
}
