//! Three-member classifier and its decision/fusion rules.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::features::{normalize_blob, FeatureBlob, NormalizerStats};
use crate::tensornet::{read_checkpoint, write_checkpoint, ClassScores, Network};
use crate::NUM_CLASSES;

pub const MEMBER_COUNT: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DESCRIPTOR_FILE: &str = "ensemble.json";

/// Per-class decision thresholds of one member.
pub type ThresholdVector = [f64; NUM_CLASSES];

pub fn validate_thresholds(alpha: &ThresholdVector) -> Result<()> {
    if alpha.iter().all(|a| *a > 0.0 && *a <= 1.0) {
        Ok(())
    } else {
        Err(config_err("threshold entries must lie in (0, 1]"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    #[default]
    L2,
    MaxConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedScores {
    pub probs: Vec<f64>,
    pub rule: FusionRule,
}

impl FusedScores {
    pub fn argmax(&self) -> usize {
        crate::argmax(&self.probs)
    }
}

/// Lowest-index argmax, kept only when it reaches its own threshold.
pub fn threshold_decide(probs: &[f64], alpha: &ThresholdVector) -> usize {
    let i = crate::argmax(probs);
    if probs[i] >= alpha[i] {
        i
    } else {
        0
    }
}

/// A pair must agree, otherwise background.
pub fn vote_two_of_three(c1: usize, c2: usize, c3: usize) -> usize {
    let d = |a: usize, b: usize| usize::from(a == b);
    (c1 * d(c1, c2)).max(c1 * d(c1, c3)).max(c2 * d(c2, c3))
}

pub fn fuse_l2(scores: &[ClassScores; MEMBER_COUNT]) -> FusedScores {
    let mut s = vec![0.0; NUM_CLASSES];
    for m in scores {
        for (a, p) in s.iter_mut().zip(&m.probs) {
            *a += p;
        }
    }
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    FusedScores {
        probs: s.iter().map(|v| v / norm).collect(),
        rule: FusionRule::L2,
    }
}

/// Member whose largest component is largest; earliest member on ties.
pub fn fuse_max_confidence(scores: &[ClassScores; MEMBER_COUNT]) -> FusedScores {
    let peak = |s: &ClassScores| s.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = 0;
    for j in 1..MEMBER_COUNT {
        if peak(&scores[j]) > peak(&scores[best]) {
            best = j;
        }
    }
    FusedScores {
        probs: scores[best].probs.clone(),
        rule: FusionRule::MaxConfidence,
    }
}

pub fn fuse(scores: &[ClassScores; MEMBER_COUNT], rule: FusionRule) -> FusedScores {
    match rule {
        FusionRule::L2 => fuse_l2(scores),
        FusionRule::MaxConfidence => fuse_max_confidence(scores),
    }
}

/// Everything the ensemble says about one blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutput {
    pub members: Vec<ClassScores>,
    pub member_decisions: [usize; MEMBER_COUNT],
    pub vote: usize,
    pub fused: FusedScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: [Network; MEMBER_COUNT],
    pub thresholds: [ThresholdVector; MEMBER_COUNT],
    pub normalizer: NormalizerStats,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    members: Vec<String>,
    thresholds: Vec<ThresholdVector>,
    normalizer: NormalizerStats,
}

impl EnsembleModel {
    pub fn new(members: [Network; MEMBER_COUNT], normalizer: NormalizerStats) -> Result<Self> {
        let model = Self {
            members,
            thresholds: [[DEFAULT_ALPHA; NUM_CLASSES]; MEMBER_COUNT],
            normalizer,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.thresholds {
            validate_thresholds(t)?;
        }
        let input = self.members[0].spec().input;
        if self.members.iter().any(|m| m.spec().input != input) {
            return Err(Error::Shape("ensemble members disagree on input shape".into()));
        }
        if self.normalizer.mean.len() != input.1 {
            return Err(Error::Shape("normalizer width does not match member input".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.members[0].spec().input
    }

    /// Member outputs for an already-normalized blob, in member order.
    pub fn predict_members(&self, blob: &FeatureBlob) -> Result<[ClassScores; MEMBER_COUNT]> {
        let [a, b, c] = &self.members;
        Ok([a.infer(blob)?, b.infer(blob)?, c.infer(blob)?])
    }

    pub fn classify(&self, blob: &FeatureBlob, rule: FusionRule) -> Result<EnsembleOutput> {
        let scores = self.predict_members(blob)?;
        let d: [usize; MEMBER_COUNT] = std::array::from_fn(|j| threshold_decide(&scores[j].probs, &self.thresholds[j]));
        Ok(EnsembleOutput {
            member_decisions: d,
            vote: vote_two_of_three(d[0], d[1], d[2]),
            fused: fuse(&scores, rule),
            members: scores.to_vec(),
        })
    }

    /// Normalizes a raw feature blob, then classifies it.
    pub fn classify_raw(&self, raw: &FeatureBlob, rule: FusionRule) -> Result<EnsembleOutput> {
        self.classify(&normalize_blob(raw, &self.normalizer)?, rule)
    }

    /// Writes `ensemble.json` plus one checkpoint per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for (j, m) in self.members.iter().enumerate() {
            let name = format!("member_{}.dvsnet", j + 1);
            write_checkpoint(m, &dir.join(&name), Some(DESCRIPTOR_FILE))?;
            names.push(name);
        }
        let d = Descriptor {
            members: names,
            thresholds: self.thresholds.to_vec(),
            normalizer: self.normalizer.clone(),
        };
        std::fs::write(dir.join(DESCRIPTOR_FILE), serde_json::to_string_pretty(&d)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DESCRIPTOR_FILE);
        if !path.exists() {
            return Err(Error::Missing(format!("{} not found", path.display())));
        }
        let d: Descriptor = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if d.members.len() != MEMBER_COUNT || d.thresholds.len() != MEMBER_COUNT {
            return Err(Error::Format("ensemble descriptor must list exactly 3 members".into()));
        }
        let mut nets = Vec::new();
        for name in &d.members {
            nets.push(read_checkpoint(&dir.join(name))?.0);
        }
        let members: [Network; MEMBER_COUNT] = nets.try_into().map_err(|_| Error::Format("member count".into()))?;
        let model = Self {
            members,
            thresholds: [d.thresholds[0], d.thresholds[1], d.thresholds[2]],
            normalizer: d.normalizer,
        };
        model.validate()?;
        Ok(model)
    }
}
