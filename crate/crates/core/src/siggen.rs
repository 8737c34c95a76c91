//! Deterministic synthetic multi-channel sensor streams for the seven signal
//! classes.
//!
//! Colored noise is synthesized by shaping white Gaussian noise in the
//! frequency domain; optional transient bursts and a slow gain drift add
//! impulsiveness and nonstationarity.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, FrameRecord, ScenarioRecord, Split};
use crate::error::{config_err, Result};
use crate::framing::{FrameShaperConfig, IntensityStream};
use crate::{NUM_CLASSES, NYQUIST_HZ, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBump {
    pub center_hz: f64,
    pub width_hz: f64,
    pub gain_db: f64,
}

impl SpectralBump {
    pub const fn new(center_hz: f64, width_hz: f64, gain_db: f64) -> Self {
        Self {
            center_hz,
            width_hz,
            gain_db,
        }
    }
}

/// Spectral and temporal character of one signal class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub class_id: usize,
    /// Gaussian bumps in linear power; empty means flat (white).
    pub spectral_envelope: Vec<SpectralBump>,
    /// Transient bursts per second.
    pub impulsiveness: f64,
    /// Relative envelope drift per minute, in [0, 1].
    pub nonstationarity: f64,
    /// RMS level in dB re one digital level.
    pub amplitude_db: f64,
}

impl ClassProfile {
    pub fn validate(&self) -> Result<()> {
        if self.class_id >= NUM_CLASSES {
            return Err(config_err(format!("class id {} out of range", self.class_id)));
        }
        for b in &self.spectral_envelope {
            if !(b.center_hz >= 0.0 && b.center_hz < NYQUIST_HZ) {
                return Err(config_err(format!(
                    "band center {} Hz is not below Nyquist ({} Hz)",
                    b.center_hz, NYQUIST_HZ
                )));
            }
            if !(b.width_hz > 0.0 && b.width_hz.is_finite()) || !b.gain_db.is_finite() {
                return Err(config_err("band width must be positive and gain finite"));
            }
        }
        if !(self.impulsiveness >= 0.0 && self.impulsiveness.is_finite()) {
            return Err(config_err("impulsiveness must be a finite rate >= 0"));
        }
        if !(0.0..=1.0).contains(&self.nonstationarity) {
            return Err(config_err("nonstationarity must lie in [0, 1]"));
        }
        if !self.amplitude_db.is_finite() {
            return Err(config_err("amplitude must be finite"));
        }
        Ok(())
    }

    /// Unnormalized power density shape at `f`.
    pub fn envelope_power(&self, f: f64) -> f64 {
        if self.spectral_envelope.is_empty() {
            return 1.0;
        }
        self.spectral_envelope
            .iter()
            .map(|b| {
                let z = (f - b.center_hz) / b.width_hz;
                10f64.powf(b.gain_db / 10.0) * (-0.5 * z * z).exp()
            })
            .sum()
    }

    /// Built-in stand-in profile for a class.
    ///
    /// Classes 1 and 4 sit spectrally closest to the class-0 background;
    /// 3 and 5 are the most distinct.
    pub fn reference(class_id: usize) -> Self {
        let (bumps, impulsiveness, nonstationarity, amplitude_db): (&[SpectralBump], f64, f64, f64) =
            match class_id {
                0 => (
                    &[
                        SpectralBump::new(15.0, 20.0, 0.0),
                        SpectralBump::new(55.0, 30.0, -5.0),
                        SpectralBump::new(300.0, 220.0, -18.0),
                    ],
                    0.3,
                    0.3,
                    40.0,
                ),
                1 => (
                    &[SpectralBump::new(170.0, 90.0, 0.0), SpectralBump::new(60.0, 40.0, -4.0)],
                    0.0,
                    0.1,
                    40.0,
                ),
                2 => (
                    &[SpectralBump::new(45.0, 18.0, 0.0), SpectralBump::new(120.0, 40.0, -3.0)],
                    1.5,
                    0.2,
                    42.0,
                ),
                3 => (
                    &[
                        SpectralBump::new(25.0, 10.0, 0.0),
                        SpectralBump::new(85.0, 20.0, -2.0),
                        SpectralBump::new(160.0, 30.0, -8.0),
                    ],
                    0.6,
                    0.4,
                    48.0,
                ),
                4 => (
                    &[
                        SpectralBump::new(120.0, 20.0, 0.0),
                        SpectralBump::new(240.0, 25.0, -4.0),
                        SpectralBump::new(60.0, 30.0, -6.0),
                    ],
                    0.0,
                    0.1,
                    40.0,
                ),
                5 => (
                    &[SpectralBump::new(650.0, 110.0, 0.0), SpectralBump::new(450.0, 80.0, -5.0)],
                    6.0,
                    0.2,
                    42.0,
                ),
                _ => (
                    &[
                        SpectralBump::new(380.0, 35.0, 0.0),
                        SpectralBump::new(760.0, 35.0, -6.0),
                        SpectralBump::new(190.0, 30.0, -8.0),
                    ],
                    0.0,
                    0.1,
                    42.0,
                ),
            };
        Self {
            class_id: class_id.min(NUM_CLASSES - 1),
            spectral_envelope: bumps.to_vec(),
            impulsiveness,
            nonstationarity,
            amplitude_db,
        }
    }

    /// Random per-recording variation of the band parameters.
    pub fn perturbed(&self, rng: &mut impl Rng, scale: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.spectral_envelope {
            b.center_hz = (b.center_hz * (1.0 + scale * 0.08 * rng.random_range(-1.0..1.0)))
                .clamp(1.0, NYQUIST_HZ - 1.0);
            b.width_hz *= 1.0 + scale * 0.2 * rng.random_range(-1.0..1.0);
            b.gain_db += scale * 2.0 * rng.random_range(-1.0..1.0);
        }
        out.impulsiveness *= 1.0 + scale * 0.3 * rng.random_range(-1.0..1.0);
        out
    }
}

fn channel_rng(seed: u64, channel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

fn shaped_noise(profile: &ClassProfile, len: usize, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    let gains: Vec<f64> = (0..len)
        .map(|k| {
            let kk = k.min(len - k);
            profile.envelope_power(kk as f64 * SAMPLE_RATE_HZ / len as f64)
        })
        .collect();
    let mean_power = gains.iter().sum::<f64>() / len as f64;
    let norm = if mean_power > 0.0 { 1.0 / mean_power.sqrt() } else { 0.0 };
    for (c, g) in buf.iter_mut().zip(&gains) {
        *c *= g.sqrt() * norm;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let inv = 1.0 / len as f64;
    buf.iter().map(|c| c.re * inv).collect()
}

fn add_bursts(profile: &ClassProfile, x: &mut [f64], rng: &mut ChaCha8Rng, level: f64) {
    if profile.impulsiveness <= 0.0 {
        return;
    }
    let gap = Exp::new(profile.impulsiveness).expect("positive rate");
    let mut t = gap.sample(rng);
    let duration = x.len() as f64 / SAMPLE_RATE_HZ;
    while t < duration {
        let freq = if profile.spectral_envelope.is_empty() {
            200.0
        } else {
            let i = rng.random_range(0..profile.spectral_envelope.len());
            profile.spectral_envelope[i].center_hz
        };
        let amp = level * rng.random_range(2.0..5.0);
        let tau = rng.random_range(0.01..0.04);
        let phase = rng.random_range(0.0..2.0 * PI);
        let start = (t * SAMPLE_RATE_HZ) as usize;
        let span = ((5.0 * tau * SAMPLE_RATE_HZ) as usize).max(1);
        for (i, v) in x.iter_mut().skip(start).take(span).enumerate() {
            let s = i as f64 / SAMPLE_RATE_HZ;
            *v += amp * (-s / tau).exp() * (2.0 * PI * freq * s + phase).sin();
        }
        t += gap.sample(rng);
    }
}

fn apply_drift(profile: &ClassProfile, x: &mut [f64], rng: &mut ChaCha8Rng) {
    if profile.nonstationarity <= 0.0 {
        return;
    }
    let phase = rng.random_range(0.0..2.0 * PI);
    for (k, v) in x.iter_mut().enumerate() {
        let t = k as f64 / SAMPLE_RATE_HZ;
        let g = 1.0 + profile.nonstationarity * (2.0 * PI * t / 60.0 + phase).sin();
        *v *= g.max(0.05);
    }
}

fn raw_channels(profile: &ClassProfile, len: usize, channels: usize, seed: u64) -> Vec<Vec<f64>> {
    let level = 10f64.powf(profile.amplitude_db / 20.0);
    let mut planner = FftPlanner::new();
    (0..channels)
        .map(|l| {
            let mut rng = channel_rng(seed, l);
            if len == 0 {
                return Vec::new();
            }
            let mut x: Vec<f64> = shaped_noise(profile, len, &mut rng, &mut planner)
                .into_iter()
                .map(|v| v * level)
                .collect();
            add_bursts(profile, &mut x, &mut rng, level);
            apply_drift(profile, &mut x, &mut rng);
            x
        })
        .collect()
}

/// Multi-channel stream of `round(duration_s * 1666)` samples per channel,
/// quantized to the 16-bit ADC range.
pub fn generate_stream(profile: &ClassProfile, duration_s: f64, channels: usize, seed: u64) -> Result<IntensityStream> {
    profile.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(config_err("duration must be positive"));
    }
    if channels == 0 {
        return Err(config_err("at least one channel is required"));
    }
    let len = (duration_s * SAMPLE_RATE_HZ).round() as usize;
    let mut s = IntensityStream::new(raw_channels(profile, len, channels, seed))?;
    s.quantize();
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedEvent {
    pub class_id: usize,
    pub start_s: f64,
    pub end_s: f64,
    /// Inclusive channel range.
    pub channel_lo: usize,
    pub channel_hi: usize,
    /// Replaces the class reference profile when present.
    #[serde(default)]
    pub profile: Option<ClassProfile>,
}

impl InjectedEvent {
    pub fn sample_span(&self) -> (usize, usize) {
        (
            (self.start_s * SAMPLE_RATE_HZ).round() as usize,
            (self.end_s * SAMPLE_RATE_HZ).round() as usize,
        )
    }

    pub fn profile(&self) -> ClassProfile {
        self.profile
            .clone()
            .unwrap_or_else(|| ClassProfile::reference(self.class_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub duration_s: f64,
    pub channel_count: usize,
    pub background: ClassProfile,
    #[serde(default)]
    pub events: Vec<InjectedEvent>,
    pub seed: u64,
    #[serde(default)]
    pub framing: FrameShaperConfig,
}

impl ScenarioSpec {
    pub fn background_only(duration_s: f64, channel_count: usize, seed: u64) -> Self {
        Self {
            duration_s,
            channel_count,
            background: ClassProfile::reference(0),
            events: Vec::new(),
            seed,
            framing: FrameShaperConfig::default(),
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * SAMPLE_RATE_HZ).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.background.validate()?;
        self.framing.validate()?;
        if !(self.duration_s > 0.0) || self.channel_count == 0 {
            return Err(config_err("scenario needs positive duration and channels"));
        }
        for (i, e) in self.events.iter().enumerate() {
            e.profile().validate()?;
            if e.class_id == 0 || e.class_id >= NUM_CLASSES {
                return Err(config_err(format!("event {i}: class must be in 1..{NUM_CLASSES}")));
            }
            if !(e.start_s >= 0.0 && e.start_s < e.end_s && e.end_s <= self.duration_s) {
                return Err(config_err(format!("event {i}: time span outside scenario")));
            }
            if e.channel_lo > e.channel_hi || e.channel_hi >= self.channel_count {
                return Err(config_err(format!("event {i}: channel span invalid")));
            }
            for (j, o) in self.events.iter().enumerate().take(i) {
                let chan_overlap = e.channel_lo <= o.channel_hi && o.channel_lo <= e.channel_hi;
                let time_overlap = e.start_s < o.end_s && o.start_s < e.end_s;
                if chan_overlap && time_overlap {
                    return Err(config_err(format!("events {j} and {i} overlap on the same channels")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub class_id: usize,
    pub frame_begin: usize,
    pub frame_end: usize,
    pub channel_lo: usize,
    pub channel_hi: usize,
    pub central_channel: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<GroundTruthEntry>,
}

/// Frames whose center sample falls inside `[start, end)`.
fn center_frames(cfg: &FrameShaperConfig, start: usize, end: usize, total: usize) -> Option<(usize, usize)> {
    let half = cfg.frame_size / 2;
    let count = cfg.frame_count(total);
    let frames: Vec<usize> = (0..count)
        .filter(|&n| {
            let c = cfg.bounds(n).0 + half;
            c >= start && c < end
        })
        .collect();
    Some((*frames.first()?, *frames.last()?))
}

const EVENT_TAPER_S: f64 = 0.05;

/// Background everywhere plus additively mixed events.
pub fn render_scenario(spec: &ScenarioSpec) -> Result<(IntensityStream, GroundTruth)> {
    spec.validate()?;
    let len = spec.sample_count();
    let mut channels = raw_channels(&spec.background, len, spec.channel_count, spec.seed);
    let mut truth = GroundTruth::default();
    for (i, e) in spec.events.iter().enumerate() {
        let (start, end) = e.sample_span();
        let end = end.min(len);
        let width = e.channel_hi - e.channel_lo + 1;
        let event_seed = spec.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
        let ev = raw_channels(&e.profile(), end - start, width, event_seed);
        let taper = ((EVENT_TAPER_S * SAMPLE_RATE_HZ) as usize).min((end - start) / 2).max(1);
        for (j, src) in ev.iter().enumerate() {
            let dst = &mut channels[e.channel_lo + j][start..end];
            let n = dst.len();
            for (k, (d, s)) in dst.iter_mut().zip(src).enumerate() {
                let edge = k.min(n - 1 - k);
                let w = if edge < taper {
                    0.5 - 0.5 * (PI * edge as f64 / taper as f64).cos()
                } else {
                    1.0
                };
                *d += w * s;
            }
        }
        if let Some((frame_begin, frame_end)) = center_frames(&spec.framing, start, end, len) {
            truth.entries.push(GroundTruthEntry {
                class_id: e.class_id,
                frame_begin,
                frame_end,
                channel_lo: e.channel_lo,
                channel_hi: e.channel_hi,
                central_channel: (e.channel_lo + e.channel_hi) / 2,
            });
        }
    }
    let mut stream = IntensityStream::new(channels)?;
    stream.quantize();
    Ok((stream, truth))
}

/// Parameters of a synthetic labeled-frame dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub classes: Vec<usize>,
    pub frames_per_class: usize,
    /// Train:test scenario ratio.
    pub split_ratio: (usize, usize),
    pub channels_per_scenario: usize,
    pub frames_per_channel: usize,
    /// Leading unlabeled frames that warm up the adaptive filter.
    pub warmup_frames: usize,
    /// 0 (easy) ..= 1 (hard); lowers event-to-background ratio and widens
    /// per-recording variation.
    pub difficulty: f64,
    pub framing: FrameShaperConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: (0..NUM_CLASSES).collect(),
            frames_per_class: 100,
            split_ratio: (7, 1),
            channels_per_scenario: 4,
            frames_per_channel: 5,
            warmup_frames: 2,
            difficulty: 0.5,
            framing: FrameShaperConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.framing.validate()?;
        if self.frames_per_class == 0 {
            return Err(config_err("frames_per_class must be >= 1"));
        }
        if self.classes.is_empty() || self.classes.iter().any(|&c| c >= NUM_CLASSES) {
            return Err(config_err("class mix must be a non-empty subset of 0..7"));
        }
        if self.channels_per_scenario == 0 || self.frames_per_channel == 0 {
            return Err(config_err("scenarios need channels and frames"));
        }
        if self.split_ratio.0 == 0 || self.split_ratio.1 == 0 {
            return Err(config_err("split ratio terms must be positive"));
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(config_err("difficulty must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Event-to-background level range in dB.
    pub fn snr_range_db(&self) -> (f64, f64) {
        (6.0 - 8.0 * self.difficulty, 14.0 - 8.0 * self.difficulty)
    }
}

fn scenario_for(cfg: &DatasetConfig, class_id: usize, rng: &mut ChaCha8Rng) -> ScenarioSpec {
    let fr = cfg.framing;
    let hop = fr.hop();
    let start = cfg.warmup_frames * hop;
    let end = (cfg.warmup_frames + cfg.frames_per_channel - 1) * hop + fr.frame_size;
    let total = end + hop;
    let scale = 0.5 + cfg.difficulty;
    let mut background = ClassProfile::reference(0).perturbed(rng, scale);
    background.amplitude_db += rng.random_range(-3.0..3.0);
    let mut events = Vec::new();
    if class_id != 0 {
        let (lo, hi) = cfg.snr_range_db();
        let mut p = ClassProfile::reference(class_id).perturbed(rng, scale);
        p.amplitude_db = background.amplitude_db + rng.random_range(lo..hi);
        events.push(InjectedEvent {
            class_id,
            start_s: start as f64 / SAMPLE_RATE_HZ,
            end_s: end as f64 / SAMPLE_RATE_HZ,
            channel_lo: 0,
            channel_hi: cfg.channels_per_scenario - 1,
            profile: Some(p),
        });
    }
    ScenarioSpec {
        duration_s: total as f64 / SAMPLE_RATE_HZ,
        channel_count: cfg.channels_per_scenario,
        background,
        events,
        seed: rng.random(),
        framing: fr,
    }
}

/// Balanced labeled-frame manifest; train and test tags never share a
/// scenario.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fr = cfg.framing;
    let per_scenario = cfg.channels_per_scenario * cfg.frames_per_channel;
    let scenarios_per_class = cfg.frames_per_class.div_ceil(per_scenario);
    let (a, b) = cfg.split_ratio;
    let mut manifest = DatasetManifest {
        framing: fr,
        scenarios: Vec::new(),
        frames: Vec::new(),
    };
    for &class_id in &cfg.classes {
        let n_test = ((scenarios_per_class * b) as f64 / (a + b) as f64).round() as usize;
        let n_test = n_test.min(scenarios_per_class.saturating_sub(1));
        let mut order: Vec<usize> = (0..scenarios_per_class).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut remaining = cfg.frames_per_class;
        for s in 0..scenarios_per_class {
            let split = if order[s] < n_test { Split::Test } else { Split::Train };
            let spec = scenario_for(cfg, class_id, &mut rng);
            let id = manifest.scenarios.len();
            let hop = fr.hop();
            let first = cfg.warmup_frames;
            'fill: for channel in 0..cfg.channels_per_scenario {
                for n in first..first + cfg.frames_per_channel {
                    if remaining == 0 {
                        break 'fill;
                    }
                    let (k_b, k_e) = fr.bounds(n);
                    debug_assert_eq!(k_b, n * hop);
                    manifest.frames.push(FrameRecord {
                        frame_id: manifest.frames.len(),
                        class_id,
                        split,
                        scenario_id: id,
                        channel,
                        frame_index: n,
                        k_b,
                        k_e,
                    });
                    remaining -= 1;
                }
            }
            manifest.scenarios.push(ScenarioRecord {
                id,
                class_id,
                split,
                spec,
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bump(center: f64, width: f64) -> ClassProfile {
        ClassProfile {
            class_id: 1,
            spectral_envelope: vec![SpectralBump::new(center, width, 0.0)],
            impulsiveness: 0.0,
            nonstationarity: 0.0,
            amplitude_db: 50.0,
        }
    }

    // Welch periodogram with a Hann window and a naive DFT.
    fn welch_peak_hz(x: &[f64], seg: usize) -> f64 {
        let hop = seg / 2;
        let w: Vec<f64> = (0..seg)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos())
            .collect();
        let mut psd = vec![0.0; seg / 2 + 1];
        let mut start = 0;
        while start + seg <= x.len() {
            for (k, p) in psd.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..seg {
                    let ph = 2.0 * PI * (k * i) as f64 / seg as f64;
                    let v = x[start + i] * w[i];
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                *p += re * re + im * im;
            }
            start += hop;
        }
        let k = psd
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        k as f64 * SAMPLE_RATE_HZ / seg as f64
    }

    #[test]
    fn deterministic_streams() {
        let p = ClassProfile::reference(2);
        let a = generate_stream(&p, 1.0, 4, 7).unwrap();
        let b = generate_stream(&p, 1.0, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1666);
        let c = generate_stream(&p, 1.0, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_bump_peak_location() {
        let s = generate_stream(&single_bump(100.0, 10.0), 10.0, 1, 3).unwrap();
        let peak = welch_peak_hz(s.channel(0), 256);
        assert!((90.0..=110.0).contains(&peak), "{peak}");
    }

    #[test]
    fn spectral_fidelity_within_one_width() {
        for (i, c) in [60.0, 230.0, 410.0, 700.0].into_iter().enumerate() {
            let s = generate_stream(&single_bump(c, 15.0), 6.0, 1, i as u64).unwrap();
            let peak = welch_peak_hz(s.channel(0), 256);
            assert!((peak - c).abs() <= 15.0, "center {c} peak {peak}");
        }
    }

    #[test]
    fn flat_profile_is_gaussian() {
        let p = ClassProfile {
            class_id: 0,
            spectral_envelope: vec![],
            impulsiveness: 0.0,
            nonstationarity: 0.0,
            amplitude_db: 40.0,
        };
        let s = generate_stream(&p, 61.0, 2, 11).unwrap();
        let x: Vec<f64> = s.channels().concat();
        assert!(x.len() >= 100_000);
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
        let excess = m4 / (m2 * m2) - 3.0;
        assert!(excess.abs() < 0.2, "{excess}");
    }

    #[test]
    fn band_above_nyquist_rejected() {
        let p = single_bump(900.0, 10.0);
        assert!(generate_stream(&p, 1.0, 1, 0).is_err());
        assert!(generate_stream(&single_bump(100.0, 10.0), 0.0, 1, 0).is_err());
        assert!(generate_stream(&single_bump(100.0, 10.0), 1.0, 0, 0).is_err());
    }

    #[test]
    fn reference_profiles_valid() {
        for c in 0..NUM_CLASSES {
            ClassProfile::reference(c).validate().unwrap();
        }
    }

    #[test]
    fn empty_scenario_is_pure_background() {
        let spec = ScenarioSpec::background_only(5.0, 3, 9);
        let (s, gt) = render_scenario(&spec).unwrap();
        assert!(gt.entries.is_empty());
        let bg = generate_stream(&spec.background, 5.0, 3, 9).unwrap();
        assert_eq!(s, bg);
    }

    fn event(class_id: usize, t: (f64, f64), ch: (usize, usize)) -> InjectedEvent {
        InjectedEvent {
            class_id,
            start_s: t.0,
            end_s: t.1,
            channel_lo: ch.0,
            channel_hi: ch.1,
            profile: None,
        }
    }

    #[test]
    fn one_event_ground_truth() {
        let mut spec = ScenarioSpec::background_only(30.0, 12, 1);
        spec.events.push(event(6, (10.0, 20.0), (5, 7)));
        let (_, gt) = render_scenario(&spec).unwrap();
        assert_eq!(gt.entries.len(), 1);
        let e = gt.entries[0];
        assert_eq!((e.class_id, e.central_channel), (6, 6));
        assert_eq!((e.channel_lo, e.channel_hi), (5, 7));
        let (b, _) = spec.framing.bounds(e.frame_begin);
        let center = b + spec.framing.frame_size / 2;
        assert!(center as f64 >= 10.0 * SAMPLE_RATE_HZ);
    }

    #[test]
    fn two_disjoint_events_in_order() {
        let mut spec = ScenarioSpec::background_only(30.0, 12, 1);
        spec.events.push(event(3, (5.0, 15.0), (8, 10)));
        spec.events.push(event(2, (5.0, 15.0), (0, 1)));
        let (_, gt) = render_scenario(&spec).unwrap();
        let classes: Vec<usize> = gt.entries.iter().map(|e| e.class_id).collect();
        assert_eq!(classes, vec![3, 2]);
    }

    #[test]
    fn overlapping_events_rejected() {
        let mut spec = ScenarioSpec::background_only(30.0, 12, 1);
        spec.events.push(event(3, (5.0, 15.0), (2, 4)));
        spec.events.push(event(2, (10.0, 20.0), (4, 6)));
        assert!(render_scenario(&spec).is_err());
        spec.events[1].channel_lo = 5;
        assert!(render_scenario(&spec).is_ok());
    }

    #[test]
    fn events_outside_bounds_rejected() {
        let mut spec = ScenarioSpec::background_only(10.0, 4, 1);
        spec.events.push(event(3, (5.0, 15.0), (0, 1)));
        assert!(render_scenario(&spec).is_err());
        spec.events[0] = event(3, (1.0, 2.0), (3, 4));
        assert!(render_scenario(&spec).is_err());
    }

    #[test]
    fn dataset_balanced_and_deterministic() {
        let cfg = DatasetConfig {
            frames_per_class: 100,
            seed: 5,
            ..DatasetConfig::default()
        };
        let m = generate_dataset(&cfg).unwrap();
        assert_eq!(m.frames.len(), 700);
        for c in 0..NUM_CLASSES {
            assert_eq!(m.frames.iter().filter(|f| f.class_id == c).count(), 100);
        }
        assert_eq!(m, generate_dataset(&cfg).unwrap());
        let train: std::collections::BTreeSet<_> =
            m.frames.iter().filter(|f| f.split == Split::Train).map(|f| f.scenario_id).collect();
        let test: std::collections::BTreeSet<_> =
            m.frames.iter().filter(|f| f.split == Split::Test).map(|f| f.scenario_id).collect();
        assert!(!test.is_empty());
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn dataset_scenarios_render() {
        let cfg = DatasetConfig {
            frames_per_class: 20,
            seed: 1,
            ..DatasetConfig::default()
        };
        let m = generate_dataset(&cfg).unwrap();
        for s in &m.scenarios {
            let (stream, gt) = render_scenario(&s.spec).unwrap();
            let last = m.frames.iter().filter(|f| f.scenario_id == s.id).map(|f| f.k_e).max().unwrap();
            assert!(last < stream.len());
            if s.class_id != 0 {
                assert_eq!(gt.entries.len(), 1);
            }
        }
    }
}
