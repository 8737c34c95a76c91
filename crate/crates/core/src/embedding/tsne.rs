use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingConfig;
use crate::error::{Error, Result};

/// Joint affinities of the input points.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major `n x n` symmetric joint probabilities, zero diagonal.
    pub p: Vec<f64>,
    /// Precision `1 / (2 sigma^2)` of each point's conditional Gaussian.
    pub betas: Vec<f64>,
}

impl Affinities {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub embedding: Vec<Vec<f64>>,
    /// KL divergence after each accepted step past the exaggeration phase.
    pub kl_trace: Vec<f64>,
    pub rejected_steps: usize,
}

const ENTROPY_TOL: f64 = 1e-6;
const BISECTION_STEPS: usize = 200;

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..n).map(move |j| points[i].iter().zip(&points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        })
        .collect()
}

/// Conditional row `p_{j|i}` for precision `beta` and its Shannon entropy
/// (nats). `row` holds squared distances with the self entry excluded by
/// `skip`.
fn conditional(row: &[f64], skip: usize, beta: f64) -> (Vec<f64>, f64) {
    let dmin = row
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != skip)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(j, d)| if j == skip { 0.0 } else { (-beta * (d - dmin)).exp() })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, v) in p.iter_mut().enumerate() {
        if j != skip {
            weighted += (row[j] - dmin) * *v;
        }
        *v /= sum;
    }
    (p, sum.ln() + beta * weighted / sum)
}

fn calibrate_row(row: &[f64], i: usize, target: f64) -> (Vec<f64>, f64) {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best = conditional(row, i, beta);
    for _ in 0..BISECTION_STEPS {
        let h = best.1;
        if (h - target).abs() < ENTROPY_TOL {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo > 0.0 { 0.5 * (lo + hi) } else { beta * 0.5 };
        }
        best = conditional(row, i, beta);
    }
    (best.0, beta)
}

/// Per-point Gaussians tuned to `perplexity`, symmetrized and normalized.
pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<Affinities> {
    let n = points.len();
    if n < 2 || !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(crate::error::config_err("perplexity must lie in (1, n)"));
    }
    let d2 = squared_distances(points);
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(&d2[i * n..(i + 1) * n], i, target))
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
        }
    }
    Ok(Affinities {
        n,
        p,
        betas: rows.into_iter().map(|r| r.1).collect(),
    })
}

/// KL(P || Q) and its gradient with P scaled by `exaggeration`.
fn objective(aff: &Affinities, y: &[Vec<f64>], exaggeration: f64) -> (f64, Vec<Vec<f64>>) {
    let n = aff.n;
    let num: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        1.0 / (1.0 + y[i].iter().zip(&y[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    }
                })
                .collect()
        })
        .collect();
    let z: f64 = num.iter().map(|r| r.iter().sum::<f64>()).sum();
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; y[i].len()];
            let mut kl = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let p = aff.at(i, j);
                let q = (num[i][j] / z).max(f64::MIN_POSITIVE);
                if p > 0.0 {
                    kl += p * (p / q).ln();
                }
                let m = 4.0 * (exaggeration * p - q) * num[i][j];
                for (gd, (a, b)) in g.iter_mut().zip(y[i].iter().zip(&y[j])) {
                    *gd += m * (a - b);
                }
            }
            (kl, g)
        })
        .collect();
    let kl = rows.iter().map(|r| r.0).sum();
    (kl, rows.into_iter().map(|r| r.1).collect())
}

fn recenter(y: &mut [Vec<f64>]) {
    let n = y.len() as f64;
    let dims = y[0].len();
    for d in 0..dims {
        let m = y.iter().map(|p| p[d]).sum::<f64>() / n;
        y.iter_mut().for_each(|p| p[d] -= m);
    }
}

fn has_duplicates(points: &[Vec<f64>]) -> bool {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    sorted.windows(2).any(|w| w[0] == w[1])
}

const MIN_GAIN: f64 = 0.01;
const MAX_HALVINGS: usize = 30;

/// Exact t-SNE with early exaggeration, momentum, per-coordinate gains and,
/// after the exaggeration phase, step halving whenever KL would increase.
pub fn tsne(points: &[Vec<f64>], cfg: &EmbeddingConfig) -> Result<TsneResult> {
    let n = points.len();
    cfg.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = points.to_vec();
    if has_duplicates(&work) {
        log::warn!("t-SNE input has duplicate points; adding seeded jitter");
        let scale = work.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0) * 1e-9;
        let jitter = Normal::new(0.0, scale).map_err(|e| Error::Numeric(e.to_string()))?;
        work.iter_mut().flatten().for_each(|v| *v += jitter.sample(&mut rng));
    }
    let aff = joint_probabilities(&work, cfg.perplexity)?;
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<Vec<f64>> = (0..n).map(|_| (0..cfg.dims).map(|_| init.sample(&mut rng)).collect()).collect();
    let mut upd = vec![vec![0.0; cfg.dims]; n];
    let mut gains = vec![vec![1.0; cfg.dims]; n];
    let mut kl_trace = Vec::new();
    let mut rejected = 0;
    let (mut kl, mut grad) = objective(&aff, &y, if cfg.exaggeration_iters > 0 { cfg.exaggeration } else { 1.0 });

    let propose = |grad: &[Vec<f64>], upd: &[Vec<f64>], gains: &mut [Vec<f64>], momentum: f64| -> Vec<Vec<f64>> {
        let mut next = upd.to_vec();
        for i in 0..n {
            for d in 0..cfg.dims {
                let g = grad[i][d];
                let same = (g > 0.0) == (upd[i][d] > 0.0);
                gains[i][d] = if same { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 }.max(MIN_GAIN);
                next[i][d] = momentum * upd[i][d] - cfg.learning_rate * gains[i][d] * g;
            }
        }
        next
    };

    for it in 0..cfg.iterations {
        let momentum = if it < cfg.momentum_switch_iter { cfg.momentum } else { cfg.final_momentum };
        if it < cfg.exaggeration_iters {
            upd = propose(&grad, &upd, &mut gains, momentum);
            for (p, u) in y.iter_mut().zip(&upd) {
                p.iter_mut().zip(u).for_each(|(a, b)| *a += b);
            }
            recenter(&mut y);
            let ex = if it + 1 < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
            (kl, grad) = objective(&aff, &y, ex);
            continue;
        }
        let step = propose(&grad, &upd, &mut gains, momentum);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<Vec<f64>> = y
                .iter()
                .zip(&step)
                .map(|(p, u)| p.iter().zip(u).map(|(a, b)| a + scale * b).collect())
                .collect();
            let (kl2, g2) = objective(&aff, &trial, 1.0);
            if kl2 <= kl {
                y = trial;
                upd = step.iter().map(|u| u.iter().map(|v| v * scale).collect()).collect();
                kl = kl2;
                grad = g2;
                kl_trace.push(kl);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            rejected += 1;
            upd.iter_mut().flatten().for_each(|v| *v = 0.0);
            gains.iter_mut().flatten().for_each(|v| *v = 1.0);
        }
    }
    recenter(&mut y);
    Ok(TsneResult {
        embedding: y,
        kl_trace,
        rejected_steps: rejected,
    })
}
