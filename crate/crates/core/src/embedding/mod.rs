//! Feature-space analysis: PCA, exact t-SNE, per-class median centers,
//! normalized center distances and their minimum spanning tree.

mod mst;
mod pca;
mod tsne;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::NUM_CLASSES;

pub use mst::{mst, MstEdge, MstEdges};
pub use pca::{pca, Pca};
pub use tsne::{joint_probabilities, tsne, Affinities, TsneResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub pca_components: usize,
    pub dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    /// Points kept for t-SNE; larger inputs are subsampled per class.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            pca_components: 64,
            dims: 3,
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            max_points: 5000,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self, n_points: usize) -> Result<()> {
        if !(self.dims == 2 || self.dims == 3) {
            return Err(config_err("embedding dims must be 2 or 3"));
        }
        if !(self.perplexity > 1.0) || self.perplexity * 3.0 > n_points as f64 {
            return Err(config_err(format!(
                "perplexity {} needs > 1 and at least {} points, got {n_points}",
                self.perplexity,
                (self.perplexity * 3.0).ceil()
            )));
        }
        if !(self.learning_rate > 0.0) || self.iterations == 0 || self.pca_components == 0 {
            return Err(config_err("learning_rate, iterations and pca_components must be positive"));
        }
        Ok(())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Coordinatewise median of each class's points.
pub fn median_centers(points: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if points.len() != labels.len() {
        return Err(Error::Shape("point and label counts differ".into()));
    }
    let dims = points.first().map_or(0, Vec::len);
    (0..NUM_CLASSES)
        .map(|c| {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                return Err(Error::Missing(format!("class {c} has no points")));
            }
            Ok((0..dims)
                .map(|d| median(&mut members.iter().map(|p| p[d]).collect::<Vec<_>>()))
                .collect())
        })
        .collect()
}

/// Symmetric distance matrix scaled so its largest entry is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub d: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// From the upper triangle, row-major, excluding the diagonal.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != n * (n - 1) / 2 {
            return Err(Error::Shape(format!("{n} nodes need {} upper entries", n * (n - 1) / 2)));
        }
        let mut d = vec![vec![0.0; n]; n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                d[i][j] = upper[k];
                d[j][i] = upper[k];
                k += 1;
            }
        }
        Ok(Self { d })
    }
}

pub fn center_distances(centers: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = centers.len();
    let mut d = vec![vec![0.0; n]; n];
    let mut max: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let v = centers[i].iter().zip(&centers[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            d[i][j] = v;
            d[j][i] = v;
            max = max.max(v);
        }
    }
    if !(max > 0.0) {
        return Err(Error::Degenerate("all cluster centers coincide".into()));
    }
    d.iter_mut().flatten().for_each(|v| *v /= max);
    Ok(DistanceMatrix { d })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    /// Indices of the input points that were embedded.
    pub kept: Vec<usize>,
    pub labels: Vec<usize>,
    pub pca: Pca,
    pub tsne: TsneResult,
    pub centers: Vec<Vec<f64>>,
    pub distances: DistanceMatrix,
    pub mst: MstEdges,
}

/// Evenly strided per-class subsample of at most `max` indices overall.
fn subsample(labels: &[usize], max: usize) -> Vec<usize> {
    if labels.len() <= max {
        return (0..labels.len()).collect();
    }
    let mut kept = Vec::new();
    for c in 0..NUM_CLASSES {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let quota = (idx.len() * max).div_ceil(labels.len()).min(idx.len());
        kept.extend((0..quota).map(|k| idx[k * idx.len() / quota]));
    }
    kept.sort_unstable();
    kept
}

/// PCA, then t-SNE, then median class centers in the embedding, their
/// normalized distances and the spanning tree over them.
pub fn analyze(points: &[Vec<f64>], labels: &[usize], cfg: &EmbeddingConfig) -> Result<Analysis> {
    if points.len() != labels.len() {
        return Err(Error::Shape("point and label counts differ".into()));
    }
    let kept = subsample(labels, cfg.max_points);
    let pts: Vec<Vec<f64>> = kept.iter().map(|&i| points[i].clone()).collect();
    let labels: Vec<usize> = kept.iter().map(|&i| labels[i]).collect();
    cfg.validate(pts.len())?;
    let dims = pts.first().map_or(0, Vec::len);
    let pca = pca(&pts, cfg.pca_components.min(dims).min(pts.len()))?;
    let tsne = tsne(&pca.projection, cfg)?;
    let centers = median_centers(&tsne.embedding, &labels)?;
    let distances = center_distances(&centers)?;
    let mst = mst(&distances)?;
    Ok(Analysis {
        kept,
        labels,
        pca,
        tsne,
        centers,
        distances,
        mst,
    })
}
