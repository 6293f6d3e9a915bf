//! Lloyd's k-means with k-means++ seeding over dense row-major points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

/// Clusters `n = data.len() / dim` points. `k` is clamped to `n`.
pub fn kmeans(data: &[f64], dim: usize, k: usize, max_iter: usize, seed: u64) -> KMeans {
    assert!(dim > 0 && data.len() % dim == 0);
    let n = data.len() / dim;
    let k = k.min(n).max(1);
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut closest: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
    while centroids.len() < k * dim {
        let total: f64 = closest.iter().sum();
        let pick = if total <= 0.0 {
            // all remaining points coincide with a centroid
            rng.random_range(0..n)
        } else {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        };
        centroids.extend_from_slice(point(pick));
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(dist2(point(i), point(pick)));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut inertia = 0.0;
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        inertia = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let p = point(i);
            let (best, d) = (0..k)
                .map(|c| (c, dist2(p, &centroids[c * dim..(c + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += d;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
    }
    KMeans {
        k,
        dim,
        centroids,
        labels,
        inertia,
    }
}

/// Best of `restarts` runs by inertia; seeds derived from `seed`.
pub fn kmeans_restarts(data: &[f64], dim: usize, k: usize, max_iter: usize, restarts: usize, seed: u64) -> KMeans {
    (0..restarts.max(1) as u64)
        .map(|r| kmeans(data, dim, k, max_iter, seed.wrapping_add(r.wrapping_mul(0x9E37_79B9_7F4A_7C15))))
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .expect("at least one run")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.extend_from_slice(&[0.0 + i as f64 * 0.01, 0.0]);
        }
        for i in 0..10 {
            data.extend_from_slice(&[10.0, 10.0 + i as f64 * 0.01]);
        }
        let km = kmeans_restarts(&data, 2, 2, 100, 3, 1);
        assert!(km.labels[..10].iter().all(|&l| l == km.labels[0]));
        assert!(km.labels[10..].iter().all(|&l| l == km.labels[10]));
        assert_ne!(km.labels[0], km.labels[10]);
    }

    #[test]
    fn identical_points_and_clamped_k() {
        let data = vec![1.0; 6];
        let km = kmeans(&data, 2, 5, 10, 0);
        assert_eq!(km.k, 3);
        assert_eq!(km.inertia, 0.0);
    }

    #[test]
    fn deterministic() {
        let data: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let a = kmeans(&data, 4, 5, 50, 9);
        let b = kmeans(&data, 4, 5, 50, 9);
        assert_eq!(a.labels, b.labels);
    }
}
