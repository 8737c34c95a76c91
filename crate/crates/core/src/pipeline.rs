//! Stream → filtered frames → adapted frames → feature blobs → ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, FrameRecord, Split, StreamSource};
use crate::ensemble::{EnsembleModel, EnsembleOutput, FusionRule};
use crate::error::{config_err, Error, Result};
use crate::features::{FeatureBlob, FeatureConfig, FeatureExtractor};
use crate::framing::{adapt_normalize, primary_filter, shape_frames, ChannelAdaptState, FrameShaperConfig, IntensityStream};
use crate::NYQUIST_HZ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub band_hz: (f64, f64),
    pub adapt_decay: f64,
    pub features: FeatureConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            band_hz: (5.0, 800.0),
            adapt_decay: 0.01,
            features: FeatureConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.band_hz;
        if !(lo > 0.0 && lo < hi && hi < NYQUIST_HZ) {
            return Err(config_err(format!("band {lo}-{hi} Hz must satisfy 0 < lo < hi < {NYQUIST_HZ}")));
        }
        if !(self.adapt_decay > 0.0 && self.adapt_decay <= 1.0) {
            return Err(config_err("adapt_decay must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Raw (unnormalized) feature blobs for every frame of every channel,
/// indexed `[channel][frame]`.
pub fn stream_blobs(stream: &IntensityStream, framing: &FrameShaperConfig, cfg: &PipelineConfig) -> Result<Vec<Vec<FeatureBlob>>> {
    cfg.validate()?;
    let filtered = primary_filter(stream, cfg.band_hz)?;
    let frames = shape_frames(&filtered, framing)?;
    let fx = FeatureExtractor::new(&cfg.features, framing.frame_size)?;
    frames
        .par_iter()
        .map(|channel| {
            let mut state = ChannelAdaptState::new(cfg.adapt_decay);
            channel
                .iter()
                .map(|f| {
                    let (adapted, next) = adapt_normalize(f, &state);
                    state = next;
                    fx.extract(&adapted)
                })
                .collect()
        })
        .collect()
}

/// One frame of a dataset, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBlob {
    pub blob: FeatureBlob,
    pub record: FrameRecord,
}

/// Feature blobs for the requested frames, in manifest order.
pub fn dataset_blobs(manifest: &DatasetManifest, source: &StreamSource<'_>, cfg: &PipelineConfig, split: Option<Split>) -> Result<Vec<LabeledBlob>> {
    let wanted: Vec<&FrameRecord> = manifest
        .frames
        .iter()
        .filter(|f| split.is_none_or(|s| f.split == s))
        .collect();
    let mut ids: Vec<usize> = wanted.iter().map(|f| f.scenario_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let per_scenario: Vec<(usize, Vec<Vec<FeatureBlob>>)> = ids
        .par_iter()
        .map(|&id| {
            let rec = manifest
                .scenario(id)
                .ok_or_else(|| Error::Format(format!("frame refers to unknown scenario {id}")))?;
            let stream = source.load(rec)?;
            Ok((id, stream_blobs(&stream, &manifest.framing, cfg)?))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(wanted.len());
    for f in wanted {
        let slot = ids.binary_search(&f.scenario_id).expect("scenario id collected above");
        let blob = per_scenario[slot]
            .1
            .get(f.channel)
            .and_then(|c| c.get(f.frame_index))
            .ok_or_else(|| Error::Format(format!("frame {} lies outside its scenario", f.frame_id)))?;
        out.push(LabeledBlob {
            blob: blob.clone(),
            record: f.clone(),
        });
    }
    Ok(out)
}

/// Ensemble outputs over a whole stream, indexed `[frame][channel]`.
pub fn infer_stream(model: &EnsembleModel, stream: &IntensityStream, framing: &FrameShaperConfig, cfg: &PipelineConfig, rule: FusionRule) -> Result<Vec<Vec<EnsembleOutput>>> {
    let blobs = stream_blobs(stream, framing, cfg)?;
    let frames = blobs.first().map_or(0, Vec::len);
    (0..frames)
        .into_par_iter()
        .map(|n| blobs.iter().map(|ch| model.classify_raw(&ch[n], rule)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siggen::{generate_dataset, DatasetConfig, ScenarioSpec};

    #[test]
    fn blob_grid_shape() {
        let spec = ScenarioSpec::background_only(10.0 * 2048.0 / 1666.0, 3, 4);
        let (stream, _) = crate::siggen::render_scenario(&spec).unwrap();
        let b = stream_blobs(&stream, &FrameShaperConfig::default(), &PipelineConfig::default()).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b[0].len(), 19);
        assert_eq!(b[2][18].shape(), (16, 64));
    }

    #[test]
    fn dataset_blobs_follow_manifest() {
        let cfg = DatasetConfig {
            frames_per_class: 25,
            classes: vec![0, 5],
            seed: 9,
            ..DatasetConfig::default()
        };
        let m = generate_dataset(&cfg).unwrap();
        let all = dataset_blobs(&m, &StreamSource::Render, &PipelineConfig::default(), None).unwrap();
        assert_eq!(all.len(), m.frames.len());
        let test = dataset_blobs(&m, &StreamSource::Render, &PipelineConfig::default(), Some(Split::Test)).unwrap();
        assert!(test.iter().all(|b| b.record.split == Split::Test));
        let f = &all[7].record;
        let (stream, _) = crate::siggen::render_scenario(&m.scenario(f.scenario_id).unwrap().spec).unwrap();
        let direct = stream_blobs(&stream, &m.framing, &PipelineConfig::default()).unwrap();
        assert_eq!(direct[f.channel][f.frame_index], all[7].blob);
    }

    #[test]
    fn band_validation() {
        let mut c = PipelineConfig::default();
        c.band_hz = (5.0, 900.0);
        assert!(c.validate().is_err());
    }
}
