//! Minimal convolutional network engine in double precision.
//!
//! Layers operate on `(channels, height, width)` activations stored
//! row-major. A network always ends in a dense layer whose outputs are
//! passed through softmax.

mod checkpoint;
mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::features::FeatureBlob;
use crate::NUM_CLASSES;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, PRECISION_F64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    MaxPool {
        window: (usize, usize),
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
    },
}

fn one() -> usize {
    1
}

/// Activation shape `(channels, height, width)`.
pub type Shape3 = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input blob shape `(rows, cols)`.
    pub input: (usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Reference member: two conv/pool stages, a 64-unit hidden layer and
    /// a 7-way output, with the given first and second kernel sizes.
    pub fn reference(input: (usize, usize), k1: usize, k2: usize, dropout: f64) -> Self {
        Self {
            input,
            layers: vec![
                LayerSpec::Conv {
                    kernel: (k1, k1),
                    channels: 8,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: (2, 2) },
                LayerSpec::Conv {
                    kernel: (k2, k2),
                    channels: 16,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: (2, 2) },
                LayerSpec::Dense { units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: dropout },
                LayerSpec::Dense { units: NUM_CLASSES },
            ],
        }
    }

    /// The three reference ensemble members C1, C2, C3.
    pub fn reference_members(input: (usize, usize)) -> [Self; 3] {
        [
            Self::reference(input, 3, 3, 0.5),
            Self::reference(input, 5, 3, 0.5),
            Self::reference(input, 3, 5, 0.5),
        ]
    }

    /// Output shape of every layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<Shape3>> {
        let (h, w) = self.input;
        if h == 0 || w == 0 {
            return Err(Error::Shape("empty input".into()));
        }
        let mut cur: Shape3 = (1, h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            cur = match *l {
                LayerSpec::Conv {
                    kernel: (kh, kw),
                    channels,
                    stride,
                } => {
                    if kh == 0 || kw == 0 || channels == 0 || stride == 0 {
                        return Err(Error::Shape(format!("layer {i}: zero-sized convolution")));
                    }
                    if kh > cur.1 || kw > cur.2 {
                        return Err(Error::Shape(format!(
                            "layer {i}: kernel {kh}x{kw} exceeds input {}x{}",
                            cur.1, cur.2
                        )));
                    }
                    (channels, (cur.1 - kh) / stride + 1, (cur.2 - kw) / stride + 1)
                }
                LayerSpec::MaxPool { window: (ph, pw) } => {
                    if ph == 0 || pw == 0 || ph > cur.1 || pw > cur.2 {
                        return Err(Error::Shape(format!("layer {i}: pool window does not fit")));
                    }
                    (cur.0, cur.1 / ph, cur.2 / pw)
                }
                LayerSpec::Relu => cur,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(config_err(format!("layer {i}: dropout rate must lie in [0, 1)")));
                    }
                    cur
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Shape(format!("layer {i}: dense layer without units")));
                    }
                    (units, 1, 1)
                }
            };
            out.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == NUM_CLASSES => Ok(out),
            _ => Err(Error::Shape(format!("network must end in a dense layer of {NUM_CLASSES} units"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }
}

/// Softmax output and the logits it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ClassScores {
    pub fn argmax(&self) -> usize {
        crate::argmax(&self.probs)
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self {
            logits: probs.iter().map(|p| p.max(1e-300).ln()).collect(),
            probs,
        }
    }
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> ClassScores {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    ClassScores {
        probs: e.iter().map(|v| v / s).collect(),
        logits: z.to_vec(),
    }
}

/// `-ln softmax(z)[target]` via log-sum-exp.
pub fn log_loss(z: &[f64], target: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[target]
}

/// One trainable tensor; biases are exempt from weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub values: Vec<f64>,
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape3>,
    /// Index into `params` of each layer's weight tensor (bias follows).
    param_slot: Vec<Option<usize>>,
    params: Vec<Param>,
}

/// Per-tensor gradients aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net.params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Activations and masks recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    aux: Vec<layers::Aux>,
    pub scores: ClassScores,
}

impl Network {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut params = Vec::new();
        let mut param_slot = Vec::with_capacity(spec.layers.len());
        let mut in_shape: Shape3 = (1, spec.input.0, spec.input.1);
        for (l, out_shape) in spec.layers.iter().zip(&shapes) {
            let dims = match *l {
                LayerSpec::Conv {
                    kernel: (kh, kw),
                    channels,
                    ..
                } => Some((channels * in_shape.0 * kh * kw, in_shape.0 * kh * kw, channels)),
                LayerSpec::Dense { units } => {
                    let fan_in = in_shape.0 * in_shape.1 * in_shape.2;
                    Some((units * fan_in, fan_in, units))
                }
                _ => None,
            };
            param_slot.push(dims.map(|(n, fan_in, n_bias)| {
                let bound = (6.0 / fan_in as f64).sqrt();
                params.push(Param {
                    values: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                    decay: true,
                });
                params.push(Param {
                    values: vec![0.0; n_bias],
                    decay: false,
                });
                params.len() - 2
            }));
            in_shape = *out_shape;
        }
        Ok(Self {
            spec,
            shapes,
            param_slot,
            params,
        })
    }

    pub fn seeded(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Output layer weight and bias tensor indices.
    pub fn output_slot(&self) -> usize {
        self.param_slot.last().copied().flatten().expect("output is dense")
    }

    fn input_shape(&self, layer: usize) -> Shape3 {
        if layer == 0 {
            (1, self.spec.input.0, self.spec.input.1)
        } else {
            self.shapes[layer - 1]
        }
    }

    fn check_blob(&self, blob: &FeatureBlob) -> Result<()> {
        if blob.shape() != self.spec.input {
            return Err(Error::Shape(format!(
                "blob {:?} does not match network input {:?}",
                blob.shape(),
                self.spec.input
            )));
        }
        Ok(())
    }

    /// Forward pass. Train mode draws dropout masks from `rng` and records
    /// the activations needed by [`Network::backward`].
    pub fn forward(&self, blob: &FeatureBlob, mode: Mode, rng: &mut impl Rng) -> Result<(ClassScores, Option<ForwardCache>)> {
        self.check_blob(blob)?;
        let train = mode == Mode::Train;
        let mut x = blob.data.clone();
        let mut inputs = Vec::new();
        let mut aux = Vec::new();
        for (i, l) in self.spec.layers.iter().enumerate() {
            let in_shape = self.input_shape(i);
            let out_shape = self.shapes[i];
            let (w, b) = match self.param_slot[i] {
                Some(s) => (&self.params[s].values[..], &self.params[s + 1].values[..]),
                None => (&[][..], &[][..]),
            };
            let (y, a) = layers::forward(l, &x, in_shape, out_shape, w, b, train, rng);
            if train {
                inputs.push(std::mem::replace(&mut x, y));
                aux.push(a);
            } else {
                x = y;
            }
        }
        let scores = softmax(&x);
        let cache = train.then(|| ForwardCache {
            inputs,
            aux,
            scores: scores.clone(),
        });
        Ok((scores, cache))
    }

    /// Deterministic inference-mode scores.
    pub fn infer(&self, blob: &FeatureBlob) -> Result<ClassScores> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(blob, Mode::Infer, &mut rng)?.0)
    }

    /// Exact cross-entropy gradients for one sample; the output seed is
    /// `softmax - target`.
    pub fn backward(&self, cache: Option<&ForwardCache>, target: &[f64]) -> Result<Gradients> {
        let cache = cache.ok_or_else(|| Error::Missing("backward needs a train-mode forward cache".into()))?;
        if target.len() != NUM_CLASSES {
            return Err(Error::Shape(format!("target has {} entries", target.len())));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut g: Vec<f64> = cache.scores.probs.iter().zip(target).map(|(s, t)| s - t).collect();
        for i in (0..self.spec.layers.len()).rev() {
            let in_shape = self.input_shape(i);
            let out_shape = self.shapes[i];
            let need_input_grad = i > 0;
            g = match self.param_slot[i] {
                Some(s) => {
                    let (head, tail) = grads.tensors.split_at_mut(s + 1);
                    layers::backward_param(
                        &self.spec.layers[i],
                        &cache.inputs[i],
                        &g,
                        in_shape,
                        out_shape,
                        &self.params[s].values,
                        &mut head[s],
                        &mut tail[0],
                        need_input_grad,
                    )
                }
                None => layers::backward_plain(&self.spec.layers[i], &g, in_shape, &cache.aux[i]),
            };
        }
        Ok(grads)
    }

    /// Mean cross-entropy loss of a sample under fixed dropout masks drawn
    /// from `mask_seed`.
    fn masked_loss(&self, blob: &FeatureBlob, target: usize, mask_seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (scores, _) = self.forward(blob, Mode::Train, &mut rng)?;
        Ok(log_loss(&scores.logits, target))
    }
}

pub fn one_hot(class: usize) -> Vec<f64> {
    let mut t = vec![0.0; NUM_CLASSES];
    t[class] = 1.0;
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: net.params.iter().map(|p| vec![0.0; p.values.len()]).collect(),
        }
    }
}

/// `v <- momentum*v + g + decay*w; w <- w - lr*v`, biases undecayed.
/// Non-finite gradients leave the network untouched.
pub fn sgd_step(net: &mut Network, grads: &Gradients, p: &SgdParams, state: &mut SgdState) -> Result<()> {
    if !(p.lr >= 0.0) {
        return Err(config_err("learning rate must be >= 0"));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient; step rejected".into()));
    }
    if grads.tensors.len() != net.params.len() {
        return Err(Error::Shape("gradient tensors do not match network".into()));
    }
    for ((param, g), v) in net.params.iter_mut().zip(&grads.tensors).zip(&mut state.velocity) {
        let decay = if param.decay { p.weight_decay } else { 0.0 };
        for ((w, gi), vi) in param.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = p.momentum * *vi + gi + decay * *w;
            *w -= p.lr * *vi;
        }
    }
    Ok(())
}

/// Worst relative error between `analytic` and central differences over a
/// random subset of `samples` parameters (all of them when fewer exist).
pub fn gradient_check_against(
    net: &Network,
    blob: &FeatureBlob,
    target: usize,
    eps: f64,
    samples: usize,
    seed: u64,
    analytic: &Gradients,
) -> Result<f64> {
    let mask_seed = seed ^ 0x5EED;
    let total = net.param_count();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let flat: Vec<(usize, usize)> = net
        .params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.values.len()).map(move |i| (t, i)))
        .collect();
    if total <= samples {
        picks = flat;
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            picks.push(flat[rng.random_range(0..total)]);
        }
    }
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (t, i) in picks {
        let orig = probe.params[t].values[i];
        probe.params[t].values[i] = orig + eps;
        let up = probe.masked_loss(blob, target, mask_seed)?;
        probe.params[t].values[i] = orig - eps;
        let down = probe.masked_loss(blob, target, mask_seed)?;
        probe.params[t].values[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.tensors[t][i];
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Finite-difference check of [`Network::backward`].
pub fn gradient_check(net: &Network, blob: &FeatureBlob, target: usize, eps: f64, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let (_, cache) = net.forward(blob, Mode::Train, &mut rng)?;
    let analytic = net.backward(cache.as_ref(), &one_hot(target))?;
    gradient_check_against(net, blob, target, eps, samples, seed, &analytic)
}
