//! Stream front end: band-pass primary filter, overlapping frame shaper and
//! per-channel adaptive standardization.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::SAMPLE_RATE_HZ;

/// Multi-channel intensity samples in ADC digital levels.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityStream {
    channels: Vec<Vec<f64>>,
    sample_rate_hz: f64,
}

impl IntensityStream {
    pub fn new(channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(config_err("stream needs at least one channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        Ok(Self {
            channels,
            sample_rate_hz: SAMPLE_RATE_HZ,
        })
    }

    pub fn zeros(channel_count: usize, len: usize) -> Self {
        Self {
            channels: vec![vec![0.0; len]; channel_count.max(1)],
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel(&self, l: usize) -> &[f64] {
        &self.channels[l]
    }

    pub fn channel_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.channels[l]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Round to the signed 16-bit ADC range.
    pub fn quantize(&mut self) {
        for c in &mut self.channels {
            for x in c.iter_mut() {
                *x = x.round().clamp(i16::MIN as f64, i16::MAX as f64);
            }
        }
    }

    /// Channel-major little-endian `i16` encoding.
    pub fn to_i16_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.channel_count() * self.len() * 2);
        for c in &self.channels {
            for &x in c {
                let v = x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_i16_le_bytes(bytes: &[u8], channel_count: usize) -> Result<Self> {
        if channel_count == 0 || bytes.len() % (2 * channel_count) != 0 {
            return Err(Error::Format(format!(
                "{} bytes do not divide into {} channels of i16 samples",
                bytes.len(),
                channel_count
            )));
        }
        let len = bytes.len() / 2 / channel_count;
        let channels = bytes
            .chunks_exact(len * 2)
            .map(|ch| {
                ch.chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64)
                    .collect()
            })
            .collect();
        Self::new(channels)
    }
}

/// One biquad in transposed direct form II with `a0` normalized to one.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(f0: f64, q: f64, fs: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Steady-state delay line for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z[0];
            z[0] = self.b[1] * input - self.a[0] * y + z[1];
            z[1] = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

// 4th-order Butterworth as two sections.
const BUTTERWORTH4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

/// Second-order-sections band-pass applied forward and backward.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    sections: Vec<Biquad>,
    padlen: usize,
}

impl BandPass {
    pub fn design(f_lo: f64, f_hi: f64, fs: f64) -> Result<Self> {
        let nyquist = fs / 2.0;
        if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist) || !f_lo.is_finite() {
            return Err(config_err(format!(
                "band ({f_lo}, {f_hi}) Hz must satisfy 0 <= lo < hi <= {nyquist}"
            )));
        }
        let mut sections = Vec::new();
        if f_lo > 0.0 {
            sections.extend(BUTTERWORTH4_Q.iter().map(|&q| Biquad::highpass(f_lo, q, fs)));
        }
        if f_hi < nyquist {
            sections.extend(BUTTERWORTH4_Q.iter().map(|&q| Biquad::lowpass(f_hi, q, fs)));
        }
        // Edge transients last a few periods of the lowest corner.
        let padlen = if f_lo > 0.0 {
            (3.0 * fs / f_lo).ceil() as usize
        } else {
            3 * (2 * sections.len() + 1)
        };
        Ok(Self { sections, padlen })
    }

    fn run_sections(&self, x: &mut [f64]) {
        let x0 = x[0];
        let mut gain = 1.0;
        for s in &self.sections {
            let z = s.step_state();
            s.run(x, [z[0] * x0 * gain, z[1] * x0 * gain]);
            gain *= s.dc_gain();
        }
    }

    /// Zero-phase filtering with odd-extension padding at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if self.sections.is_empty() || n < 2 {
            return x.to_vec();
        }
        let pad = self.padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.run_sections(&mut ext);
        ext.reverse();
        self.run_sections(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Per-channel band-pass removing components outside the valid signal range.
pub fn primary_filter(stream: &IntensityStream, band: (f64, f64)) -> Result<IntensityStream> {
    let bp = BandPass::design(band.0, band.1, stream.sample_rate_hz())?;
    let channels = stream.channels().iter().map(|c| bp.filtfilt(c)).collect();
    IntensityStream::new(channels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameShaperConfig {
    /// Samples per frame (K').
    pub frame_size: usize,
    /// Overlap factor f_d in 1..=8.
    pub overlap_factor: usize,
}

impl Default for FrameShaperConfig {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            overlap_factor: 2,
        }
    }
}

impl FrameShaperConfig {
    pub fn new(frame_size: usize, overlap_factor: usize) -> Result<Self> {
        let cfg = Self {
            frame_size,
            overlap_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 {
            return Err(config_err("frame size must be positive"));
        }
        if !(1..=8).contains(&self.overlap_factor) {
            return Err(config_err("overlap factor must be in 1..=8"));
        }
        if self.frame_size % self.overlap_factor != 0 {
            return Err(config_err("frame size must be divisible by the overlap factor"));
        }
        Ok(())
    }

    /// Distance between consecutive frame starts.
    pub fn hop(&self) -> usize {
        self.frame_size / self.overlap_factor
    }

    /// Inclusive sample bounds `(k_b, k_e)` of frame `n`.
    pub fn bounds(&self, n: usize) -> (usize, usize) {
        let k_b = n * self.frame_size / self.overlap_factor;
        (k_b, k_b + self.frame_size - 1)
    }

    /// Number of whole frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_size {
            0
        } else {
            (len - self.frame_size) / self.hop() + 1
        }
    }

    /// Frame indices whose sample span lies inside `[start, end)`.
    pub fn frames_within(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        let first = start.div_ceil(self.hop());
        let last = if end < self.frame_size {
            0
        } else {
            (end - self.frame_size) / self.hop() + 1
        };
        first..last.max(first)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFrame {
    pub frame_index: usize,
    pub channel_index: usize,
    pub samples: Vec<f64>,
}

/// Cut every channel into overlapping frames; outer index is the channel.
pub fn shape_frames(stream: &IntensityStream, cfg: &FrameShaperConfig) -> Result<Vec<Vec<IntensityFrame>>> {
    cfg.validate()?;
    let count = cfg.frame_count(stream.len());
    Ok(stream
        .channels()
        .iter()
        .enumerate()
        .map(|(l, samples)| {
            (0..count)
                .map(|n| {
                    let (k_b, k_e) = cfg.bounds(n);
                    IntensityFrame {
                        frame_index: n,
                        channel_index: l,
                        samples: samples[k_b..=k_e].to_vec(),
                    }
                })
                .collect()
        })
        .collect())
}

/// Running per-channel statistics for the secondary adaptation filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelAdaptState {
    pub mean: f64,
    pub var: f64,
    pub decay: f64,
    pub initialized: bool,
}

pub const ADAPT_VAR_EPSILON: f64 = 1e-9;

impl ChannelAdaptState {
    /// Fresh state; the first frame seeds the statistics directly.
    pub fn new(decay: f64) -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            decay,
            initialized: false,
        }
    }

    pub fn frozen(mean: f64, var: f64) -> Self {
        Self {
            mean,
            var,
            decay: 0.0,
            initialized: true,
        }
    }
}

/// Standardize a frame by the channel's running mean and variance.
pub fn adapt_normalize(frame: &IntensityFrame, state: &ChannelAdaptState) -> (IntensityFrame, ChannelAdaptState) {
    let n = frame.samples.len().max(1) as f64;
    let frame_mean = frame.samples.iter().sum::<f64>() / n;
    let mut next = *state;
    if state.initialized {
        let d = state.decay;
        next.mean = (1.0 - d) * state.mean + d * frame_mean;
        let frame_var = frame.samples.iter().map(|x| (x - next.mean).powi(2)).sum::<f64>() / n;
        next.var = ((1.0 - d) * state.var + d * frame_var).max(0.0);
    } else {
        next.mean = frame_mean;
        next.var = frame.samples.iter().map(|x| (x - frame_mean).powi(2)).sum::<f64>() / n;
        next.initialized = true;
    }
    let samples = if next.var < ADAPT_VAR_EPSILON {
        vec![0.0; frame.samples.len()]
    } else {
        let inv = 1.0 / next.var.sqrt();
        frame.samples.iter().map(|x| (x - next.mean) * inv).collect()
    };
    (
        IntensityFrame {
            frame_index: frame.frame_index,
            channel_index: frame.channel_index,
            samples,
        },
        next,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, amp: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|k| amp * (2.0 * PI * freq * k as f64 / SAMPLE_RATE_HZ).sin())
            .collect()
    }

    // Naive single-bin DFT magnitude; independent of the filter path.
    fn dft_mag(x: &[f64], freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * k as f64 / SAMPLE_RATE_HZ;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn in_band_tone_passes() {
        let s = IntensityStream::new(vec![tone(400.0, 1000.0, 16660)]).unwrap();
        let y = primary_filter(&s, (5.0, 800.0)).unwrap();
        let mid = &y.channel(0)[2000..14000];
        let ratio_db = 20.0 * (rms(mid) / (1000.0 / 2f64.sqrt())).log10();
        assert!(ratio_db.abs() < 1.0, "{ratio_db}");
    }

    #[test]
    fn dc_is_rejected() {
        let s = IntensityStream::new(vec![vec![700.0; 16660]]).unwrap();
        let y = primary_filter(&s, (5.0, 800.0)).unwrap();
        let mean = y.channel(0).iter().sum::<f64>() / 16660.0;
        assert!(mean.abs() < 1.0, "{mean}");
    }

    #[test]
    fn low_tone_attenuated_20db() {
        let x = tone(1.0, 1000.0, 1666 * 30);
        let s = IntensityStream::new(vec![x.clone()]).unwrap();
        let y = primary_filter(&s, (5.0, 800.0)).unwrap();
        let att = 20.0 * (dft_mag(y.channel(0), 1.0) / dft_mag(&x, 1.0)).log10();
        assert!(att <= -20.0, "{att}");
    }

    #[test]
    fn invalid_band_rejected() {
        let s = IntensityStream::zeros(1, 100);
        assert!(primary_filter(&s, (10.0, 5.0)).is_err());
        assert!(primary_filter(&s, (5.0, 900.0)).is_err());
        assert!(primary_filter(&s, (-1.0, 100.0)).is_err());
    }

    #[test]
    fn output_length_matches() {
        let s = IntensityStream::new(vec![tone(50.0, 1.0, 333); 3]).unwrap();
        let y = primary_filter(&s, (5.0, 800.0)).unwrap();
        assert_eq!(y.len(), 333);
        assert_eq!(y.channel_count(), 3);
    }

    #[test]
    fn frame_bounds_closed_form() {
        let cfg = FrameShaperConfig::new(1024, 1).unwrap();
        assert_eq!(cfg.bounds(0), (0, 1023));
        let cfg = FrameShaperConfig::new(1024, 2).unwrap();
        assert_eq!(cfg.bounds(1), (512, 1535));
    }

    #[test]
    fn ten_frames_overlap_two_gives_nineteen() {
        let cfg = FrameShaperConfig::new(256, 2).unwrap();
        let s = IntensityStream::zeros(2, 2560);
        let frames = shape_frames(&s, &cfg).unwrap();
        assert_eq!(frames[0].len(), 19);
        assert_eq!(frames[1].last().unwrap().frame_index, 18);
    }

    #[test]
    fn short_stream_gives_no_frames() {
        let cfg = FrameShaperConfig::new(256, 2).unwrap();
        let s = IntensityStream::zeros(1, 255);
        assert!(shape_frames(&s, &cfg).unwrap()[0].is_empty());
    }

    #[test]
    fn bad_shaper_configs() {
        assert!(FrameShaperConfig::new(0, 1).is_err());
        assert!(FrameShaperConfig::new(1024, 9).is_err());
        assert!(FrameShaperConfig::new(1024, 0).is_err());
        assert!(FrameShaperConfig::new(1000, 3).is_err());
    }

    #[test]
    fn non_overlapping_tiling_partitions_prefix() {
        let cfg = FrameShaperConfig::new(100, 1).unwrap();
        let x: Vec<f64> = (0..1055).map(|v| v as f64).collect();
        let s = IntensityStream::new(vec![x]).unwrap();
        let frames = &shape_frames(&s, &cfg).unwrap()[0];
        let joined: Vec<f64> = frames.iter().flat_map(|f| f.samples.clone()).collect();
        assert_eq!(joined.len(), 1000);
        assert!(joined.iter().enumerate().all(|(i, &v)| v == i as f64));
    }

    #[test]
    fn frames_within_span() {
        let cfg = FrameShaperConfig::new(100, 2).unwrap();
        let r = cfg.frames_within(120, 460);
        for n in r.clone() {
            let (b, e) = cfg.bounds(n);
            assert!(b >= 120 && e < 460);
        }
        assert_eq!(r, 3..8);
    }

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut st = ChannelAdaptState::new(0.01);
        let mut out = None;
        for n in 0..5 {
            let f = IntensityFrame {
                frame_index: n,
                channel_index: 0,
                samples: vec![42.0; 64],
            };
            let (o, s) = adapt_normalize(&f, &st);
            st = s;
            out = Some(o);
        }
        assert!(out.unwrap().samples.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn frozen_unit_state_is_identity() {
        let st = ChannelAdaptState::frozen(0.0, 1.0);
        let f = IntensityFrame {
            frame_index: 0,
            channel_index: 0,
            samples: vec![1.5, -2.0, 3.25, 0.0],
        };
        let (o, s) = adapt_normalize(&f, &st);
        assert_eq!(o.samples, f.samples);
        assert_eq!(s, st);
    }

    #[test]
    fn gain_step_recovers_within_horizon() {
        use rand::{Rng, SeedableRng};
        let decay = 0.01;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut st = ChannelAdaptState::new(decay);
        let frame = |gain: f64, rng: &mut rand_chacha::ChaCha8Rng| IntensityFrame {
            frame_index: 0,
            channel_index: 0,
            samples: (0..256).map(|_| gain * rng.random_range(-1.0..1.0)).collect(),
        };
        let mut pre = 0.0;
        for _ in 0..200 {
            let (o, s) = adapt_normalize(&frame(1.0, &mut rng), &st);
            st = s;
            pre = rms(&o.samples);
        }
        let horizon = (10.0 / decay) as usize;
        let mut recovered = None;
        for i in 0..horizon {
            let (o, s) = adapt_normalize(&frame(10.0, &mut rng), &st);
            st = s;
            if (rms(&o.samples) - pre).abs() <= 0.2 * pre {
                recovered = Some(i);
                break;
            }
        }
        assert!(recovered.is_some());
    }

    #[test]
    fn raw_roundtrip() {
        let s = IntensityStream::new(vec![vec![1.0, -2.0, 32767.0], vec![-32768.0, 0.0, 5.0]]).unwrap();
        let b = s.to_i16_le_bytes();
        assert_eq!(IntensityStream::from_i16_le_bytes(&b, 2).unwrap(), s);
        assert!(IntensityStream::from_i16_le_bytes(&b[..5], 2).is_err());
    }
}
