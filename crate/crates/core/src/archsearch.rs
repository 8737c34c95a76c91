//! Differential evolution (rand/1/bin) over member architectures and
//! training hyperparameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensornet::{LayerSpec, Network, NetworkSpec};
use crate::training::{member_accuracy, train_member, LabeledFrame, TrainConfig};
use crate::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub population: usize,
    pub f: f64,
    pub cr: f64,
    pub generations: usize,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 12,
            f: 0.5,
            cr: 0.9,
            generations: 10,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(config_err("DE population must be >= 4"));
        }
        if !(0.0..=2.0).contains(&self.f) || !(0.0..=1.0).contains(&self.cr) {
            return Err(config_err("DE needs F in [0, 2] and CR in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_genome: Vec<f64>,
    pub best_fitness: f64,
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOutcome {
    pub best_genome: Vec<f64>,
    pub best_fitness: f64,
    pub population: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    /// Entry 0 describes the initial population.
    pub trace: Vec<GenerationRecord>,
}

fn record(generation: usize, pop: &[Vec<f64>], fit: &[f64]) -> GenerationRecord {
    let best = (0..fit.len()).fold(0, |b, i| if fit[i] < fit[b] { i } else { b });
    GenerationRecord {
        generation,
        best_genome: pop[best].clone(),
        best_fitness: fit[best],
        mean_fitness: fit.iter().sum::<f64>() / fit.len() as f64,
    }
}

fn distinct(rng: &mut ChaCha8Rng, n: usize, exclude: usize) -> [usize; 3] {
    let mut out = [exclude; 3];
    for k in 0..3 {
        loop {
            let c = rng.random_range(0..n);
            if c != exclude && !out[..k].contains(&c) {
                out[k] = c;
                break;
            }
        }
    }
    out
}

/// Minimizes `fitness` inside `bounds`. Trials are generated sequentially
/// from one seeded stream and evaluated in parallel, so the result does
/// not depend on the worker count.
pub fn de_optimize<F>(bounds: &[(f64, f64)], fitness: F, cfg: &DeConfig) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(config_err("bounds must be non-empty and ordered"));
    }
    let np = cfg.population;
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect())
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|x| fitness(x)).collect();
    let mut trace = vec![record(0, &pop, &fit)];
    for generation in 1..=cfg.generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let [a, b, c] = distinct(&mut rng, np, i);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let cross = rng.random::<f64>() < cfg.cr || j == forced;
                        if cross {
                            let v = pop[a][j] + cfg.f * (pop[b][j] - pop[c][j]);
                            v.clamp(bounds[j].0, bounds[j].1)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| fitness(x)).collect();
        for (i, (t, tf)) in trials.into_iter().zip(trial_fit).enumerate() {
            if tf <= fit[i] {
                pop[i] = t;
                fit[i] = tf;
            }
        }
        trace.push(record(generation, &pop, &fit));
        log::debug!("generation {generation}: best {}", trace.last().map_or(0.0, |r| r.best_fitness));
    }
    let last = trace.last().expect("initial record").clone();
    Ok(DeOutcome {
        best_genome: last.best_genome,
        best_fitness: last.best_fitness,
        population: pop,
        fitness: fit,
        trace,
    })
}

pub const KERNEL_CHOICES: [usize; 3] = [3, 5, 7];
pub const MAX_CONV: usize = 3;

/// Bounds of every gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub conv_layers: (usize, usize),
    pub channels: (usize, usize),
    pub dense: (usize, usize),
    pub dropout: (f64, f64),
    pub log10_lr: (f64, f64),
    pub log10_weight_decay: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            conv_layers: (1, 3),
            channels: (4, 32),
            dense: (16, 128),
            dropout: (0.0, 0.7),
            log10_lr: (-3.0, -1.0),
            log10_weight_decay: (-6.0, -2.0),
        }
    }
}

/// Decoded architecture and training genes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    /// `(kernel, channels)` per convolution layer.
    pub conv: Vec<(usize, usize)>,
    pub dense: usize,
    pub dropout: f64,
    pub log10_lr: f64,
    pub log10_weight_decay: f64,
}

/// Nearest integer; exact halves go down.
fn round_half_down(x: f64) -> f64 {
    let r = x.round();
    if (x - x.floor() - 0.5).abs() < 1e-12 {
        x.floor()
    } else {
        r
    }
}

/// Nearest admissible kernel; ties go to the smaller kernel.
pub fn round_kernel(x: f64) -> usize {
    let mut best = KERNEL_CHOICES[0];
    for &k in &KERNEL_CHOICES[1..] {
        if (x - k as f64).abs() < (x - best as f64).abs() {
            best = k;
        }
    }
    best
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = 1 <= self.conv_layers.0
            && self.conv_layers.0 <= self.conv_layers.1
            && self.conv_layers.1 <= MAX_CONV
            && 1 <= self.channels.0
            && self.channels.0 <= self.channels.1
            && 1 <= self.dense.0
            && self.dense.0 <= self.dense.1
            && 0.0 <= self.dropout.0
            && self.dropout.0 <= self.dropout.1
            && self.dropout.1 < 1.0
            && self.log10_lr.0 <= self.log10_lr.1
            && self.log10_weight_decay.0 <= self.log10_weight_decay.1;
        if ok {
            Ok(())
        } else {
            Err(config_err("search space bounds are not well ordered"))
        }
    }

    /// Gene layout: conv count, 3 kernels, 3 channel counts, dense width,
    /// dropout, log10 lr, log10 weight decay.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let k = (KERNEL_CHOICES[0] as f64, KERNEL_CHOICES[2] as f64);
        let c = (self.channels.0 as f64, self.channels.1 as f64);
        vec![
            (self.conv_layers.0 as f64, self.conv_layers.1 as f64),
            k,
            k,
            k,
            c,
            c,
            c,
            (self.dense.0 as f64, self.dense.1 as f64),
            self.dropout,
            self.log10_lr,
            self.log10_weight_decay,
        ]
    }

    pub fn decode(&self, genome: &[f64]) -> ArchParams {
        let b = self.bounds();
        let g: Vec<f64> = genome.iter().zip(&b).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect();
        let n = round_half_down(g[0]) as usize;
        ArchParams {
            conv: (0..n).map(|i| (round_kernel(g[1 + i]), round_half_down(g[4 + i]) as usize)).collect(),
            dense: round_half_down(g[7]) as usize,
            dropout: g[8],
            log10_lr: g[9],
            log10_weight_decay: g[10],
        }
    }

    /// Unused convolution slots take their lower bounds.
    pub fn encode(&self, p: &ArchParams) -> Vec<f64> {
        let mut g = vec![0.0; 11];
        g[0] = p.conv.len() as f64;
        for i in 0..MAX_CONV {
            let (k, c) = p.conv.get(i).copied().unwrap_or((KERNEL_CHOICES[0], self.channels.0));
            g[1 + i] = k as f64;
            g[4 + i] = c as f64;
        }
        g[7] = p.dense as f64;
        g[8] = p.dropout;
        g[9] = p.log10_lr;
        g[10] = p.log10_weight_decay;
        g
    }
}

impl ArchParams {
    /// Shape-consistent spec: kernels and pools shrink to fit what is left
    /// of the input.
    pub fn to_spec(&self, input: (usize, usize)) -> NetworkSpec {
        let (mut h, mut w) = input;
        let mut layers = Vec::new();
        for &(k, c) in &self.conv {
            let kernel = (k.min(h), k.min(w));
            layers.push(LayerSpec::Conv {
                kernel,
                channels: c,
                stride: 1,
            });
            layers.push(LayerSpec::Relu);
            h = h - kernel.0 + 1;
            w = w - kernel.1 + 1;
            let window = (h.min(2), w.min(2));
            if window != (1, 1) {
                layers.push(LayerSpec::MaxPool { window });
                h /= window.0;
                w /= window.1;
            }
        }
        layers.push(LayerSpec::Dense { units: self.dense });
        layers.push(LayerSpec::Relu);
        if self.dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: self.dropout });
        }
        layers.push(LayerSpec::Dense { units: NUM_CLASSES });
        NetworkSpec { input, layers }
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: 10f64.powf(self.log10_lr),
            weight_decay: 10f64.powf(self.log10_weight_decay),
            dropout: self.dropout,
            ..base.clone()
        }
    }
}

/// Test accuracy after an abbreviated training run; 0 on divergence.
pub fn fitness_eval(net: Network, train: &[LabeledFrame], test: &[LabeledFrame], cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 {
        return member_accuracy(&net, test).unwrap_or(0.0);
    }
    match train_member(net, train, test, cfg) {
        Ok((_, h)) => h.best_accuracy().unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: ArchParams,
    pub best_spec: NetworkSpec,
    pub best_accuracy: f64,
    pub trace: Vec<GenerationRecord>,
}

/// DE over `space`, scoring each genome by short-budget accuracy.
pub fn search_architecture(space: &SearchSpace, train: &[LabeledFrame], test: &[LabeledFrame], de: &DeConfig, budget: &TrainConfig) -> Result<SearchOutcome> {
    space.validate()?;
    let input = train.first().ok_or_else(|| config_err("empty training set"))?.blob.shape();
    let fitness = |g: &[f64]| {
        let p = space.decode(g);
        let cfg = p.train_config(budget);
        match Network::seeded(p.to_spec(input), budget.seed) {
            Ok(net) => -fitness_eval(net, train, test, &cfg),
            Err(_) => 0.0,
        }
    };
    let out = de_optimize(&space.bounds(), fitness, de)?;
    let best = space.decode(&out.best_genome);
    Ok(SearchOutcome {
        best_spec: best.to_spec(input),
        best,
        best_accuracy: -out.best_fitness,
        trace: out.trace,
    })
}
