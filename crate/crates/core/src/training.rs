//! Objective, mini-batch SGD loop, self-relabeling and dataset splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Split};
use crate::ensemble::{fuse_l2, threshold_decide, EnsembleModel, ThresholdVector};
use crate::error::{config_err, Error, Result};
use crate::features::{fit_normalizer, normalize_blob, FeatureBlob, NormalizerStats};
use crate::pipeline::LabeledBlob;
use crate::tensornet::{one_hot, sgd_step, Gradients, Mode, Network, NetworkSpec, SgdParams, SgdState};
use crate::NUM_CLASSES;

pub const PROB_FLOOR: f64 = 1e-12;

/// A normalized blob with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub blob: FeatureBlob,
    pub class_id: usize,
    pub frame_id: usize,
    pub scenario_id: usize,
}

impl LabeledFrame {
    pub fn target(&self) -> Vec<f64> {
        one_hot(self.class_id)
    }
}

/// Fits the normalizer on `train` and applies it to both sets.
pub fn prepare_frames(train: &[LabeledBlob], test: &[LabeledBlob], clip: f64) -> Result<(Vec<LabeledFrame>, Vec<LabeledFrame>, NormalizerStats)> {
    let raw: Vec<FeatureBlob> = train.iter().map(|b| b.blob.clone()).collect();
    let stats = fit_normalizer(&raw, clip)?;
    let conv = |set: &[LabeledBlob]| -> Result<Vec<LabeledFrame>> {
        set.par_iter()
            .map(|b| {
                Ok(LabeledFrame {
                    blob: normalize_blob(&b.blob, &stats)?,
                    class_id: b.record.class_id,
                    frame_id: b.record.frame_id,
                    scenario_id: b.record.scenario_id,
                })
            })
            .collect()
    };
    Ok((conv(train)?, conv(test)?, stats))
}

/// Mean categorical cross-entropy with probabilities floored at 1e-12.
pub fn cross_entropy_loss(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if probs.is_empty() {
        return Err(config_err("loss of an empty batch"));
    }
    if probs.len() != targets.len() {
        return Err(Error::Shape("score and label counts differ".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(p, t)| -p.iter().zip(t).map(|(pi, ti)| ti * pi.max(PROB_FLOOR).ln()).sum::<f64>())
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiply lr by `lr_decay_factor` every this many epochs; 0 disables.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Stop after this many epochs without a new best test accuracy.
    pub patience: Option<usize>,
    /// Frames used for the per-epoch train-loss estimate.
    pub loss_subset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 0.01,
            lr_decay_every: 0,
            lr_decay_factor: 0.5,
            momentum: 0.9,
            weight_decay: 1e-4,
            dropout: 0.5,
            patience: None,
            loss_subset: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("epochs and batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(config_err("lr must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("dropout and momentum must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(config_err("weight_decay must be >= 0 and lr_decay_factor > 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            0 => self.lr,
            k => self.lr * self.lr_decay_factor.powi((epoch / k) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Seconds since the start of training at the end of each epoch.
    pub elapsed_s: Vec<f64>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e].test_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,test_accuracy,elapsed_s\n");
        for (r, t) in self.records.iter().zip(&self.elapsed_s) {
            s.push_str(&format!("{},{},{},{},{:.3}\n", r.epoch, r.lr, r.train_loss, r.test_accuracy, t));
        }
        s
    }
}

/// Training stopped on a numeric failure; carries the last good state.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub last_good: Network,
    pub history: TrainHistory,
}

impl From<TrainAbort> for Error {
    fn from(a: TrainAbort) -> Self {
        a.error
    }
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut h = seed ^ 0x243F_6A88_85A3_08D3;
    for v in [epoch as u64, index as u64] {
        h = (h ^ v).wrapping_mul(0x1000_0000_01B3).rotate_left(29);
    }
    h
}

/// Fraction of frames whose member argmax matches the label.
pub fn member_accuracy(net: &Network, frames: &[LabeledFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(config_err("accuracy of an empty set"));
    }
    let hits = frames
        .par_iter()
        .map(|f| Ok(usize::from(net.infer(&f.blob)?.argmax() == f.class_id)))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / frames.len() as f64)
}

fn infer_loss(net: &Network, frames: &[LabeledFrame]) -> Result<f64> {
    let probs = frames.par_iter().map(|f| Ok(net.infer(&f.blob)?.probs)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = frames.iter().map(LabeledFrame::target).collect();
    cross_entropy_loss(&probs, &targets)
}

fn batch_gradients(net: &Network, frames: &[LabeledFrame], batch: &[usize], seed: u64, epoch: usize) -> Result<(Gradients, f64)> {
    let parts = batch
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, i));
            let f = &frames[i];
            let (scores, cache) = net.forward(&f.blob, Mode::Train, &mut rng)?;
            let loss = -scores.probs[f.class_id].max(PROB_FLOOR).ln();
            Ok((net.backward(cache.as_ref(), &f.target())?, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.add_assign(g);
        loss += l;
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, loss / batch.len() as f64))
}

/// Mini-batch SGD over shuffled epochs; returns the parameters of the epoch
/// with the best test accuracy (earliest on ties).
pub fn train_member(net: Network, train: &[LabeledFrame], test: &[LabeledFrame], cfg: &TrainConfig) -> Result<(Network, TrainHistory), TrainAbort> {
    let abort = |error: Error, last_good: &Network, history: &TrainHistory| TrainAbort {
        error,
        last_good: last_good.clone(),
        history: history.clone(),
    };
    let mut history = TrainHistory::default();
    if let Err(e) = cfg.validate() {
        return Err(abort(e, &net, &history));
    }
    if train.is_empty() || test.is_empty() {
        return Err(abort(config_err("train and test sets must be non-empty"), &net, &history));
    }
    let ids: BTreeSet<usize> = train.iter().map(|f| f.frame_id).collect();
    if test.iter().any(|f| ids.contains(&f.frame_id)) {
        return Err(abort(config_err("train and test sets overlap"), &net, &history));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_idx: Vec<usize> = (0..train.len()).collect();
    loss_idx.shuffle(&mut rng);
    loss_idx.truncate(cfg.loss_subset.max(1));
    loss_idx.sort_unstable();
    let loss_set: Vec<LabeledFrame> = loss_idx.iter().map(|&i| train[i].clone()).collect();

    let mut net = net;
    let mut state = SgdState::new(&net);
    let mut best = net.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let p = SgdParams {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let step = batch_gradients(&net, train, batch, cfg.seed, epoch).and_then(|(g, loss)| {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
                }
                sgd_step(&mut net, &g, &p, &mut state)
            });
            if let Err(e) = step {
                return Err(abort(e, &best, &history));
            }
        }
        let measured = infer_loss(&net, &loss_set).and_then(|l| Ok((l, member_accuracy(&net, test)?)));
        let (train_loss, acc) = match measured {
            Ok(v) if v.0.is_finite() => v,
            Ok(_) => return Err(abort(Error::Numeric(format!("loss diverged at epoch {epoch}")), &best, &history)),
            Err(e) => return Err(abort(e, &best, &history)),
        };
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            test_accuracy: acc,
        });
        history.elapsed_s.push(start.elapsed().as_secs_f64());
        log::debug!("epoch {epoch}: loss {train_loss:.4} acc {acc:.4}");
        if acc > best_acc {
            best_acc = acc;
            best = net.clone();
            history.best_epoch = Some(epoch);
        }
        if let (Some(pat), Some(b)) = (cfg.patience, history.best_epoch) {
            if epoch >= b + pat {
                break;
            }
        }
    }
    Ok((best, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelChange {
    pub frame_id: usize,
    pub scenario_id: usize,
    pub from: usize,
    pub to: usize,
    pub confidence: f64,
}

/// One relabeling pass: L2 fusion, threshold rule, then replace labels the
/// ensemble contradicts with confidence above `min_confidence`.
pub fn relabel_dataset(model: &EnsembleModel, frames: &[LabeledFrame], alpha: &ThresholdVector, min_confidence: f64) -> Result<(Vec<LabeledFrame>, Vec<RelabelChange>)> {
    let decisions = frames
        .par_iter()
        .map(|f| {
            let fused = fuse_l2(&model.predict_members(&f.blob)?);
            let d = threshold_decide(&fused.probs, alpha);
            Ok((d, fused.probs[d]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = frames.to_vec();
    let mut changes = Vec::new();
    for (f, (d, conf)) in out.iter_mut().zip(decisions) {
        if d != f.class_id && conf > min_confidence {
            changes.push(RelabelChange {
                frame_id: f.frame_id,
                scenario_id: f.scenario_id,
                from: f.class_id,
                to: d,
                confidence: conf,
            });
            f.class_id = d;
        }
    }
    Ok((out, changes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleTrainConfig {
    /// Member specs; empty means the three reference members.
    pub members: Vec<NetworkSpec>,
    pub train: TrainConfig,
    pub relabel: bool,
    pub relabel_confidence: f64,
    /// Epochs of final tuning after relabeling.
    pub tune_epochs: usize,
}

impl Default for EnsembleTrainConfig {
    fn default() -> Self {
        Self {
            members: Vec::new(),
            train: TrainConfig::default(),
            relabel: true,
            relabel_confidence: 0.95,
            tune_epochs: 10,
        }
    }
}

impl EnsembleTrainConfig {
    pub fn member_specs(&self, input: (usize, usize)) -> Result<[NetworkSpec; 3]> {
        let specs: [NetworkSpec; 3] = if self.members.is_empty() {
            [(3, 3), (5, 3), (3, 5)].map(|(a, b)| NetworkSpec::reference(input, a, b, self.train.dropout))
        } else {
            self.members
                .clone()
                .try_into()
                .map_err(|_| config_err("exactly three member specs are required"))?
        };
        for s in &specs {
            s.validate()?;
            if s.input != input {
                return Err(Error::Shape(format!("member input {:?} does not match blobs {:?}", s.input, input)));
            }
        }
        Ok(specs)
    }
}

#[derive(Debug)]
pub struct EnsembleFit {
    pub model: EnsembleModel,
    pub histories: Vec<TrainHistory>,
    pub tune_histories: Vec<TrainHistory>,
    pub changes: Vec<RelabelChange>,
}

/// Trains three members separately, relabels once, then fine-tunes.
pub fn fit_ensemble(train: &[LabeledFrame], test: &[LabeledFrame], normalizer: NormalizerStats, cfg: &EnsembleTrainConfig) -> Result<EnsembleFit> {
    let input = train.first().ok_or_else(|| config_err("empty training set"))?.blob.shape();
    let specs = cfg.member_specs(input)?;
    let mut members = Vec::new();
    let mut histories = Vec::new();
    for (j, spec) in specs.into_iter().enumerate() {
        let mc = TrainConfig {
            seed: cfg.train.seed.wrapping_add(j as u64),
            ..cfg.train.clone()
        };
        let net = Network::seeded(spec, mc.seed)?;
        let (net, h) = train_member(net, train, test, &mc)?;
        log::info!("member {} best test accuracy {:.4}", j + 1, h.best_accuracy().unwrap_or(0.0));
        members.push(net);
        histories.push(h);
    }
    let members: [Network; 3] = members.try_into().expect("three members");
    let mut model = EnsembleModel::new(members, normalizer)?;
    let mut changes = Vec::new();
    let mut tune_histories = Vec::new();
    if cfg.relabel && cfg.tune_epochs > 0 {
        let (fixed, ch) = relabel_dataset(&model, train, &model.thresholds[0], cfg.relabel_confidence)?;
        changes = ch;
        for j in 0..3 {
            let tc = TrainConfig {
                epochs: cfg.tune_epochs,
                seed: cfg.train.seed.wrapping_add(100 + j as u64),
                ..cfg.train.clone()
            };
            let (net, h) = train_member(model.members[j].clone(), &fixed, test, &tc)?;
            if h.best_accuracy() >= histories[j].best_accuracy() {
                model.members[j] = net;
            }
            tune_histories.push(h);
        }
    }
    Ok(EnsembleFit {
        model,
        histories,
        tune_histories,
        changes,
    })
}

/// Scenario-level split with equal per-class test counts.
///
/// Per class, whole scenarios are moved to the test side until it holds at
/// least `floor(total * b / (a + b) / classes)` frames; the test side is then
/// subsampled to exactly that count and the surplus frames of test scenarios
/// are dropped.
pub fn split_dataset(manifest: &DatasetManifest, ratio: (usize, usize), seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    let (a, b) = ratio;
    if a == 0 || b == 0 {
        return Err(config_err("split ratio terms must be positive"));
    }
    let mut by_class: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for s in &manifest.scenarios {
        by_class.entry(s.class_id).or_default().insert(s.id, Vec::new());
    }
    for (i, f) in manifest.frames.iter().enumerate() {
        by_class
            .get_mut(&f.class_id)
            .and_then(|m| m.get_mut(&f.scenario_id))
            .ok_or_else(|| Error::Format(format!("frame {} has no matching scenario", f.frame_id)))?
            .push(i);
    }
    if by_class.is_empty() {
        return Err(config_err("empty manifest"));
    }
    for (c, scen) in &by_class {
        if scen.values().all(Vec::is_empty) {
            return Err(config_err(format!("class {c} has no samples")));
        }
    }
    let target = manifest.frames.len() * b / (a + b) / by_class.len();
    if target == 0 {
        return Err(config_err("not enough samples for a balanced test split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_frames: BTreeSet<usize> = BTreeSet::new();
    let mut test_scen = BTreeSet::new();
    for (c, scen) in &by_class {
        let mut ids: Vec<usize> = scen.keys().copied().filter(|id| !scen[id].is_empty()).collect();
        ids.shuffle(&mut rng);
        let mut pool: Vec<usize> = Vec::new();
        let mut taken = 0;
        while pool.len() < target && taken < ids.len() {
            pool.extend(&scen[&ids[taken]]);
            test_scen.insert(ids[taken]);
            taken += 1;
        }
        if pool.len() < target || taken == ids.len() {
            return Err(config_err(format!("class {c} has too few scenarios for the requested split")));
        }
        pool.shuffle(&mut rng);
        test_frames.extend(pool.into_iter().take(target));
    }
    let pick = |split: Split| {
        let mut m = DatasetManifest {
            framing: manifest.framing,
            scenarios: Vec::new(),
            frames: Vec::new(),
        };
        for s in &manifest.scenarios {
            if test_scen.contains(&s.id) == (split == Split::Test) {
                let mut s = s.clone();
                s.split = split;
                m.scenarios.push(s);
            }
        }
        for (i, f) in manifest.frames.iter().enumerate() {
            let keep = match split {
                Split::Test => test_frames.contains(&i),
                Split::Train => !test_scen.contains(&f.scenario_id),
            };
            if keep {
                let mut f = f.clone();
                f.split = split;
                m.frames.push(f);
            }
        }
        m
    };
    Ok((pick(Split::Train), pick(Split::Test)))
}

/// Train and test sets drawn around the same seven Gaussian centers.
pub fn gaussian_clusters(per_class: (usize, usize), shape: (usize, usize), spread: f64, seed: u64) -> (Vec<LabeledFrame>, Vec<LabeledFrame>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.0 * shape.1;
    let centers: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut next_id = 0;
    let mut draw = |count: usize| {
        let mut out = Vec::new();
        for _ in 0..count {
            for (c, center) in centers.iter().enumerate() {
                let d = center.iter().map(|m| m + spread * rng.sample::<f64, _>(StandardNormal)).collect();
                out.push(LabeledFrame {
                    blob: FeatureBlob::new(shape.0, shape.1, d).expect("shape"),
                    class_id: c,
                    frame_id: next_id,
                    scenario_id: next_id,
                });
                next_id += 1;
            }
        }
        out
    };
    let train = draw(per_class.0);
    let test = draw(per_class.1);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FrameRecord, ScenarioRecord};
    use crate::framing::FrameShaperConfig;
    use crate::siggen::ScenarioSpec;
    use crate::tensornet::LayerSpec;

    #[test]
    fn loss_examples() {
        let oh = |c| one_hot(c);
        let l = cross_entropy_loss(&[oh(3), oh(1)], &[oh(3), oh(1)]).unwrap();
        assert!(l <= 1e-11);
        let u = cross_entropy_loss(&[vec![1.0 / 7.0; 7]], &[oh(2)]).unwrap();
        assert!((u - 7f64.ln()).abs() < 1e-12);
        assert!((u - 1.94591).abs() < 1e-5);
        let mut p = vec![0.5 / 6.0; 7];
        p[4] = 0.5;
        assert!((cross_entropy_loss(&[p], &[oh(4)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy_loss(&[], &[]).is_err());
        assert!(cross_entropy_loss(&[vec![0.0; 7]], &[oh(0)]).unwrap().is_finite());
    }

    fn small_spec() -> NetworkSpec {
        NetworkSpec {
            input: (2, 6),
            layers: vec![LayerSpec::Dense { units: 16 }, LayerSpec::Relu, LayerSpec::Dense { units: 7 }],
        }
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 0.05,
            dropout: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_clusters_learned() {
        let (train, test) = gaussian_clusters((20, 10), (2, 6), 0.2, 1);
        let (_, h) = train_member(Network::seeded(small_spec(), 3).unwrap(), &train, &test, &quick_cfg(50)).unwrap();
        assert_eq!(h.best_accuracy(), Some(1.0));
        assert_eq!(h.records.len(), 50);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let (train, test) = gaussian_clusters((5, 3), (2, 6), 0.2, 1);
        let net = Network::seeded(small_spec(), 3).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..quick_cfg(4) };
        let (out, h) = train_member(net.clone(), &train, &test, &cfg).unwrap();
        assert_eq!(out, net);
        assert!(h.records.windows(2).all(|w| w[0].train_loss == w[1].train_loss && w[0].test_accuracy == w[1].test_accuracy));
    }

    #[test]
    fn training_is_deterministic() {
        let (train, test) = gaussian_clusters((6, 3), (2, 6), 0.5, 1);
        let cfg = TrainConfig { dropout: 0.3, ..quick_cfg(5) };
        let spec = NetworkSpec {
            input: (2, 6),
            layers: vec![LayerSpec::Dense { units: 16 }, LayerSpec::Relu, LayerSpec::Dropout { rate: 0.3 }, LayerSpec::Dense { units: 7 }],
        };
        let run = || train_member(Network::seeded(spec.clone(), 3).unwrap(), &train, &test, &cfg).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha.records, hb.records);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let (train, test) = gaussian_clusters((6, 3), (2, 6), 0.5, 1);
        let run = |workers| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
            pool.install(|| train_member(Network::seeded(small_spec(), 3).unwrap(), &train, &test, &quick_cfg(3)).unwrap())
        };
        assert_eq!(run(1).0, run(3).0);
    }

    #[test]
    fn divergence_returns_last_good() {
        let (train, test) = gaussian_clusters((6, 3), (2, 6), 0.5, 1);
        let cfg = TrainConfig { lr: 1e200, momentum: 0.0, ..quick_cfg(5) };
        let err = train_member(Network::seeded(small_spec(), 3).unwrap(), &train, &test, &cfg).unwrap_err();
        assert_eq!(err.error.category(), crate::ErrorCategory::Numeric);
        assert!(err.last_good.params().iter().all(|p| p.values.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn overlapping_sets_rejected() {
        let (train, _) = gaussian_clusters((2, 0), (2, 6), 0.5, 1);
        assert!(train_member(Network::seeded(small_spec(), 3).unwrap(), &train, &train, &quick_cfg(1)).is_err());
    }

    #[test]
    fn patience_stops_early() {
        let (train, test) = gaussian_clusters((10, 5), (2, 6), 0.1, 1);
        let cfg = TrainConfig { patience: Some(3), ..quick_cfg(100) };
        let (_, h) = train_member(Network::seeded(small_spec(), 3).unwrap(), &train, &test, &cfg).unwrap();
        assert!(h.records.len() < 100);
        assert_eq!(h.records.len(), h.best_epoch.unwrap() + 4);
    }

    /// Members that map a 1x7 one-hot blob to a confident softmax of the
    /// same class.
    fn oracle_model() -> EnsembleModel {
        let spec = NetworkSpec {
            input: (1, 7),
            layers: vec![LayerSpec::Dense { units: 7 }],
        };
        let mut net = Network::seeded(spec, 0).unwrap();
        let w = &mut net.params_mut()[0].values;
        w.fill(0.0);
        for i in 0..7 {
            w[i * 7 + i] = 20.0;
        }
        net.params_mut()[1].values.fill(0.0);
        EnsembleModel::new([net.clone(), net.clone(), net], NormalizerStats::identity(7, 8.0)).unwrap()
    }

    fn one_hot_frames() -> Vec<LabeledFrame> {
        (0..21)
            .map(|i| LabeledFrame {
                blob: FeatureBlob::new(1, 7, one_hot(i % 7)).unwrap(),
                class_id: i % 7,
                frame_id: i,
                scenario_id: i,
            })
            .collect()
    }

    #[test]
    fn relabel_agreeing_model_changes_nothing() {
        let m = oracle_model();
        let frames = one_hot_frames();
        let (out, ch) = relabel_dataset(&m, &frames, &[0.5; 7], 0.95).unwrap();
        assert!(ch.is_empty());
        assert_eq!(out, frames);
    }

    #[test]
    fn relabel_flips_planted_label() {
        let m = oracle_model();
        let mut frames = one_hot_frames();
        frames[9].class_id = 5;
        let (out, ch) = relabel_dataset(&m, &frames, &[0.5; 7], 0.95).unwrap();
        assert_eq!(ch.len(), 1);
        assert_eq!((ch[0].frame_id, ch[0].from, ch[0].to), (9, 5, 2));
        assert!(ch[0].confidence > 0.95);
        assert_eq!(out[9].class_id, 2);
        let (_, none) = relabel_dataset(&m, &frames, &[0.5; 7], 1.01).unwrap();
        assert!(none.is_empty());
    }

    fn flat_manifest(per_class: usize, frames_per_scenario: usize) -> DatasetManifest {
        let mut m = DatasetManifest {
            framing: FrameShaperConfig::default(),
            scenarios: Vec::new(),
            frames: Vec::new(),
        };
        for c in 0..7 {
            for s in 0..per_class / frames_per_scenario {
                let id = m.scenarios.len();
                m.scenarios.push(ScenarioRecord {
                    id,
                    class_id: c,
                    split: Split::Train,
                    spec: ScenarioSpec::background_only(3.0, 1, (c * 1000 + s) as u64),
                });
                for k in 0..frames_per_scenario {
                    m.frames.push(FrameRecord {
                        frame_id: m.frames.len(),
                        class_id: c,
                        split: Split::Train,
                        scenario_id: id,
                        channel: 0,
                        frame_index: k,
                        k_b: 0,
                        k_e: 0,
                    });
                }
            }
        }
        m
    }

    fn class_counts(m: &DatasetManifest) -> [usize; 7] {
        let mut c = [0; 7];
        for f in &m.frames {
            c[f.class_id] += 1;
        }
        c
    }

    #[test]
    fn split_700_six_to_one() {
        let m = flat_manifest(100, 1);
        let (tr, te) = split_dataset(&m, (6, 1), 4).unwrap();
        assert_eq!(class_counts(&te), [14; 7]);
        assert_eq!((tr.frames.len(), te.frames.len()), (602, 98));
        let a: BTreeSet<usize> = tr.frames.iter().map(|f| f.scenario_id).collect();
        assert!(te.frames.iter().all(|f| !a.contains(&f.scenario_id)));
        assert_eq!(split_dataset(&m, (6, 1), 4).unwrap(), (tr, te));
    }

    #[test]
    fn split_whole_scenarios() {
        let m = flat_manifest(2300, 20);
        let (tr, te) = split_dataset(&m, (20, 3), 1).unwrap();
        assert_eq!(class_counts(&te), [300; 7]);
        assert_eq!(class_counts(&tr), [2000; 7]);
        let mut m2 = flat_manifest(100, 10);
        m2.frames.retain(|f| f.class_id != 3);
        assert!(split_dataset(&m2, (6, 1), 0).is_err());
    }
}
