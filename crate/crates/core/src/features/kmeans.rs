use rand::Rng;

use crate::error::{input_err, Result};
use crate::numerics::Array2;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    pub centroids: Array2,
    /// Within-cluster sum of squares after seeding and after every Lloyd round.
    pub wcss_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }

    /// Nearest-centroid id per frame (ties to the lowest id).
    pub fn assign(&self, frames: &Array2) -> Vec<usize> {
        frames.iter_rows().map(|r| self.nearest(r)).collect()
    }

    pub fn wcss(&self, frames: &Array2) -> f64 {
        frames
            .iter_rows()
            .map(|r| nearest(&self.centroids, r).1)
            .sum()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter_rows().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until no assignment changes
/// or `iters` rounds have run.
pub fn kmeans_fit<R: Rng>(
    frames: &Array2,
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Result<KMeansModel> {
    let n = frames.rows();
    if k == 0 {
        return input_err("k must be at least 1");
    }
    if n < k {
        return input_err(format!("{n} frames cannot form {k} clusters"));
    }
    let d = frames.cols();

    let mut centroids = Array2::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(frames.row(first));
    let mut dist: Vec<f64> = frames
        .iter_rows()
        .map(|r| sq_dist(r, frames.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(frames.row(pick));
        for (i, r) in frames.iter_rows().enumerate() {
            dist[i] = dist[i].min(sq_dist(r, frames.row(pick)));
        }
    }

    let mut assign: Vec<usize> = frames
        .iter_rows()
        .map(|r| nearest(&centroids, r).0)
        .collect();
    let mut trace = vec![wcss_of(frames, &centroids, &assign)];
    for _ in 0..iters {
        // update step; empty clusters keep their centroid
        let mut sums = Array2::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, r) in frames.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums.row_mut(assign[i]).iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        let next: Vec<usize> = frames
            .iter_rows()
            .map(|r| nearest(&centroids, r).0)
            .collect();
        trace.push(wcss_of(frames, &centroids, &next));
        let changed = next != assign;
        assign = next;
        if !changed {
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        wcss_trace: trace,
    })
}

fn wcss_of(frames: &Array2, centroids: &Array2, assign: &[usize]) -> f64 {
    frames
        .iter_rows()
        .zip(assign)
        .map(|(r, &a)| sq_dist(r, centroids.row(a)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Array2 {
        let mut rng = stream(seed, "blobs");
        let n = Normal::new(0.0, sd).unwrap();
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..per {
                rows.push(vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)]);
            }
        }
        Array2::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let x = blobs(&[[1.0, 2.0], [4.0, -1.0]], 10, 0.5, 1);
        let m = kmeans_fit(&x, 1, 20, &mut stream(1, "k")).unwrap();
        let mean = x.mean_rows();
        for (c, m) in m.centroids.row(0).iter().zip(&mean) {
            assert!((c - m).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_clouds_recover_their_means() {
        let x = blobs(&[[-100.0, 0.0], [100.0, 5.0]], 15, 1.0, 2);
        let m = kmeans_fit(&x, 2, 50, &mut stream(2, "k")).unwrap();
        let mean_a = x.slice_rows(0, 15).mean_rows();
        let mean_b = x.slice_rows(15, 15).mean_rows();
        let mut cs: Vec<Vec<f64>> = m.centroids.iter_rows().map(<[f64]>::to_vec).collect();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (c, e) in cs[0].iter().zip(&mean_a).chain(cs[1].iter().zip(&mean_b)) {
            assert!((c - e).abs() < 1e-9);
        }
    }

    #[test]
    fn lloyd_descent_is_monotone() {
        let x = blobs(
            &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [2.0, 2.0]],
            20,
            1.2,
            3,
        );
        for seed in 0..10 {
            let m = kmeans_fit(&x, 4, 100, &mut stream(seed, "k")).unwrap();
            for w in m.wcss_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", m.wcss_trace);
            }
        }
    }

    #[test]
    fn too_few_frames_is_an_input_error() {
        let x = Array2::zeros(2, 3);
        assert!(kmeans_fit(&x, 3, 10, &mut stream(0, "k")).is_err());
    }
}
