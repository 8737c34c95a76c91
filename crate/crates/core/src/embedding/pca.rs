use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal principal directions, strongest first.
    pub basis: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Share of total variance per kept component.
    pub explained_ratio: Vec<f64>,
    pub projection: Vec<Vec<f64>>,
    pub requested: usize,
}

impl Pca {
    pub fn effective(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((bi, xi), m)| bi * (xi - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (b, zi) in self.basis.iter().zip(z) {
            for (xv, bv) in x.iter_mut().zip(b) {
                *xv += zi * bv;
            }
        }
        x
    }
}

const RANK_TOL: f64 = 1e-12;

/// Mean-centered PCA. Uses the covariance matrix when features are fewer
/// than samples, otherwise the Gram matrix. Components with negligible
/// variance are dropped, so `effective()` may be below `k`.
pub fn pca(data: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    if n < 2 || d == 0 || k == 0 {
        return Err(config_err("pca needs at least two samples, one feature and one component"));
    }
    if n < k {
        return Err(config_err(format!("{n} samples cannot yield {k} components")));
    }
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged data matrix".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite data".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let scale = 1.0 / (n - 1) as f64;
    let (values, vectors) = if d <= n {
        let e = SymmetricEigen::new(x.transpose() * &x * scale);
        (e.eigenvalues, e.eigenvectors)
    } else {
        // Eigenvectors of X Xᵀ map to those of Xᵀ X through Xᵀ u / ‖Xᵀ u‖.
        let e = SymmetricEigen::new(&x * x.transpose() * scale);
        let v = x.transpose() * &e.eigenvectors;
        (e.eigenvalues, v)
    };
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let mut basis = Vec::new();
    let mut explained = Vec::new();
    for &i in order.iter().take(k) {
        let lambda = values[i];
        if !(lambda > RANK_TOL * top.max(f64::MIN_POSITIVE)) {
            break;
        }
        let col = vectors.column(i);
        let norm = col.norm();
        basis.push(col.iter().map(|v| v / norm).collect::<Vec<f64>>());
        explained.push(lambda);
    }
    if basis.is_empty() {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    if basis.len() < k {
        log::warn!("pca: rank deficient, {} of {k} components kept", basis.len());
    }
    let mut p = Pca {
        mean,
        explained_ratio: explained.iter().map(|v| v / total).collect(),
        basis,
        explained_variance: explained,
        projection: Vec::new(),
        requested: k,
    };
    p.projection = data.iter().map(|r| p.project(r)).collect();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn line_has_one_component() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let p = pca(&pts, 2).unwrap();
        assert!(p.explained_ratio[0] >= 0.99999);
        assert_eq!(p.effective(), 1);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec<f64>> = (0..60).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let p = pca(&pts, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = p.basis[i].iter().zip(&p.basis[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_rank_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vec<f64>> = (0..100).map(|_| (0..10).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let p = pca(&pts, 10).unwrap();
        let (mut err, mut norm) = (0.0, 0.0);
        for (x, z) in pts.iter().zip(&p.projection) {
            let r = p.reconstruct(z);
            err += x.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            norm += x.iter().map(|a| a * a).sum::<f64>();
        }
        assert!((err / norm).sqrt() < 1e-8);
    }

    #[test]
    fn wide_data_matches_covariance_eigenvalues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (n, d) = (12, 30);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let wide = pca(&pts, 3).unwrap();
        let mean: Vec<f64> = (0..d).map(|j| pts.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let cov = DMatrix::from_fn(d, d, |a, b| {
            pts.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64
        });
        let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in wide.explained_variance.iter().zip(&ev) {
            assert!((got - want).abs() < 1e-9 * want.max(1.0));
        }
        for b in &wide.basis {
            assert!((b.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn translation_invariant_up_to_sign() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let moved: Vec<Vec<f64>> = pts.iter().map(|r| r.iter().map(|v| v + 100.0).collect()).collect();
        let (a, b) = (pca(&pts, 3).unwrap(), pca(&moved, 3).unwrap());
        for c in 0..3 {
            let s = a.basis[c].iter().zip(&b.basis[c]).map(|(x, y)| x * y).sum::<f64>().signum();
            for (pa, pb) in a.projection.iter().zip(&b.projection) {
                assert!((pa[c] - s * pb[c]).abs() < 1e-8);
            }
        }
    }
}
