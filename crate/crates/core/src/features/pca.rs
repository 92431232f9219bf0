use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{input_err, Result};
use crate::numerics::Array2;

/// Principal-component projection fitted on frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `[d_raw x d_pca]`, orthonormal columns ordered by decreasing variance.
    pub projection: Array2,
    /// Variance captured by each kept component.
    pub explained: Vec<f64>,
}

impl PcaModel {
    pub fn d_pca(&self) -> usize {
        self.projection.cols()
    }

    pub fn explained_total(&self) -> f64 {
        self.explained.iter().sum()
    }
}

/// Relative eigenvalue threshold below which a direction counts as absent.
const RANK_TOL: f64 = 1e-10;

/// Top-`d_pca` eigenvectors of the sample covariance (denominator `n - 1`).
pub fn pca_fit(frames: &Array2, d_pca: usize) -> Result<PcaModel> {
    let (n, d) = frames.shape();
    if d_pca == 0 || d_pca > d {
        return input_err(format!("d_pca {d_pca} must be in 1..={d}"));
    }
    if d > n {
        return input_err(format!(
            "{n} frames are fewer than the {d} input dimensions"
        ));
    }
    let mean = frames.mean_rows();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in frames.iter_rows() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept = eig.eigenvalues[order[d_pca - 1]];
    if top <= 0.0 || kept <= RANK_TOL * top {
        return input_err(format!(
            "covariance has fewer than {d_pca} non-degenerate directions"
        ));
    }

    let mut projection = Array2::zeros(d, d_pca);
    let mut explained = Vec::with_capacity(d_pca);
    for (col, &src) in order.iter().take(d_pca).enumerate() {
        let v = eig.eigenvectors.column(src);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            projection.set(r, col, sign * v[r]);
        }
        explained.push(eig.eigenvalues[src]);
    }
    Ok(PcaModel {
        mean,
        projection,
        explained,
    })
}

/// `(x - mean) * projection`
pub fn pca_apply(model: &PcaModel, frames: &Array2) -> Result<Array2> {
    if frames.cols() != model.mean.len() {
        return input_err(format!(
            "frames have {} columns, PCA expects {}",
            frames.cols(),
            model.mean.len()
        ));
    }
    let mut centered = frames.clone();
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&model.mean) {
            *v -= m;
        }
    }
    centered.matmul(&model.projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn line_data_reconstructs_exactly() {
        let mut rng = stream(1, "pca");
        let dir = [0.5, -1.0, 2.0, 0.25];
        let origin = [1.0, 2.0, 3.0, 4.0];
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let s: f64 = rng.random_range(-3.0..3.0);
                (0..4).map(|i| origin[i] + s * dir[i]).collect()
            })
            .collect();
        let x = Array2::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        let z = pca_apply(&m, &x).unwrap();
        let back = z.matmul(&m.projection.transpose()).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            for j in 0..4 {
                assert!((back.get(i, j) + m.mean[j] - row[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_rank_projection_preserves_variance_and_distances() {
        let mut rng = stream(2, "pca");
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = Array2::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 5).unwrap();
        let z = pca_apply(&m, &x).unwrap();
        let var = |a: &Array2| -> f64 {
            let mu = a.mean_rows();
            a.iter_rows()
                .map(|r| {
                    r.iter()
                        .zip(&mu)
                        .map(|(v, m)| (v - m) * (v - m))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / (a.rows() - 1) as f64
        };
        assert!((var(&x) - var(&z)).abs() < 1e-6);
        assert!((m.explained_total() - var(&x)).abs() < 1e-9);
        let d = |a: &[f64], b: &[f64]| crate::features::kmeans::sq_dist(a, b).sqrt();
        for i in 0..10 {
            for j in 0..10 {
                assert!((d(x.row(i), x.row(j)) - d(z.row(i), z.row(j))).abs() < 1e-9);
            }
        }
        let gram = m.projection.transpose().matmul(&m.projection).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rank_deficient_request_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, 2.0 * i as f64, 0.0])
            .collect();
        let x = Array2::from_rows(&rows).unwrap();
        assert!(pca_fit(&x, 1).is_ok());
        assert!(pca_fit(&x, 2).is_err());
        assert!(pca_fit(&x, 4).is_err());
    }
}
