//! Decision statistics and the primary features array.
//!
//! Each frame is split into `sub_windows` equal sub-windows. For each one we
//! take a Hamming-windowed periodogram, sum it into a linear filter bank and
//! log-compress the band energies, then append four time-domain statistics.
//! The result is an `sub_windows x (bands + 4)` blob.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::framing::IntensityFrame;
use crate::SAMPLE_RATE_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
}

/// One-sided power spectrum scaled so the bins sum to the mean square of
/// the windowed input.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub bins: Vec<f64>,
    pub bin_width_hz: f64,
    pub window: Window,
}

impl PowerSpectrum {
    pub fn total_power(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn max_frequency_hz(&self) -> f64 {
        (self.bins.len() - 1) as f64 * self.bin_width_hz
    }
}

pub struct SpectrumAnalyzer {
    len: usize,
    fft_len: usize,
    window: Vec<f64>,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(len: usize) -> Result<Self> {
        if len < 8 {
            return Err(config_err("spectrum needs at least 8 samples"));
        }
        let fft_len = len.next_power_of_two();
        let window: Vec<f64> = (0..len)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        Ok(Self {
            len,
            fft_len,
            window,
            window_power,
            fft,
        })
    }

    pub fn analyze(&self, samples: &[f64]) -> Result<PowerSpectrum> {
        if samples.len() != self.len {
            return Err(Error::Shape(format!("expected {} samples, got {}", self.len, samples.len())));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        for ((b, &x), &w) in buf.iter_mut().zip(samples).zip(&self.window) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        let half = self.fft_len / 2;
        let scale = 1.0 / (self.fft_len as f64 * self.window_power);
        let bins = (0..=half)
            .map(|k| {
                let c = if k == 0 || k == half { 1.0 } else { 2.0 };
                c * buf[k].norm_sqr() * scale
            })
            .collect();
        Ok(PowerSpectrum {
            bins,
            bin_width_hz: SAMPLE_RATE_HZ / self.fft_len as f64,
            window: Window::Hamming,
        })
    }
}

/// Hamming-windowed one-sided periodogram; input is zero-padded to a power
/// of two.
pub fn power_spectrum(samples: &[f64]) -> Result<PowerSpectrum> {
    SpectrumAnalyzer::new(samples.len())?.analyze(samples)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeStats {
    /// Excess kurtosis, m4/m2^2 - 3.
    pub kurtosis: f64,
    pub skewness: f64,
    pub rms: f64,
    pub peak_factor: f64,
}

pub fn time_stats(samples: &[f64]) -> Result<TimeStats> {
    if samples.len() < 4 {
        return Err(config_err("time statistics need at least 4 samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4, mut sq, mut peak) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        sq += x * x;
        peak = peak.max(x.abs());
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 1e-300 || m2 <= 1e-24 * mean * mean {
        return Err(Error::Degenerate("zero-variance frame".into()));
    }
    let rms = (sq / n).sqrt();
    Ok(TimeStats {
        kurtosis: m4 / (m2 * m2) - 3.0,
        skewness: m3 / m2.powf(1.5),
        rms,
        peak_factor: peak / rms,
    })
}

/// Contiguous, non-overlapping frequency bands `[lo, hi)`; the last band
/// includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub edges_hz: Vec<f64>,
}

impl FilterBank {
    pub fn linear(lo_hz: f64, hi_hz: f64, bands: usize) -> Result<Self> {
        if bands == 0 || !(lo_hz >= 0.0 && lo_hz < hi_hz) {
            return Err(config_err("filter bank needs bands > 0 and lo < hi"));
        }
        let step = (hi_hz - lo_hz) / bands as f64;
        Ok(Self {
            edges_hz: (0..=bands).map(|i| lo_hz + step * i as f64).collect(),
        })
    }

    pub fn band_count(&self) -> usize {
        self.edges_hz.len().saturating_sub(1)
    }

    /// Bin index range of every band.
    pub fn bin_ranges(&self, spectrum: &PowerSpectrum) -> Result<Vec<std::ops::Range<usize>>> {
        if self.edges_hz.len() < 2 || self.edges_hz.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config_err("band edges must be strictly increasing"));
        }
        let top = *self.edges_hz.last().unwrap();
        if self.edges_hz[0] < 0.0 || top > spectrum.max_frequency_hz() + 1e-9 {
            return Err(config_err("bands exceed spectrum range"));
        }
        let nb = self.band_count();
        let mut ranges = Vec::with_capacity(nb);
        for b in 0..nb {
            let (lo, hi) = (self.edges_hz[b], self.edges_hz[b + 1]);
            let inside = |k: usize| {
                let f = k as f64 * spectrum.bin_width_hz;
                f >= lo && (f < hi || (b == nb - 1 && f <= hi + 1e-9))
            };
            let first = (0..spectrum.bins.len()).find(|&k| inside(k));
            let Some(first) = first else {
                return Err(config_err(format!("band {b} ({lo:.2}-{hi:.2} Hz) contains no bins")));
            };
            let mut end = first;
            while end < spectrum.bins.len() && inside(end) {
                end += 1;
            }
            ranges.push(first..end);
        }
        Ok(ranges)
    }

    pub fn linear_energies(&self, spectrum: &PowerSpectrum) -> Result<Vec<f64>> {
        Ok(self
            .bin_ranges(spectrum)?
            .into_iter()
            .map(|r| spectrum.bins[r].iter().sum())
            .collect())
    }
}

/// Per-band summed power, log-compressed with a floor.
pub fn filter_bank_energies(spectrum: &PowerSpectrum, bank: &FilterBank, floor: f64) -> Result<Vec<f64>> {
    Ok(bank
        .linear_energies(spectrum)?
        .into_iter()
        .map(|e| e.max(floor).ln())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Time sub-windows per frame (N_M).
    pub sub_windows: usize,
    pub bands: usize,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub log_floor: f64,
    /// Clamp for standardized features.
    pub clip: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sub_windows: 16,
            bands: 60,
            band_lo_hz: 5.0,
            band_hi_hz: 800.0,
            log_floor: 1e-10,
            clip: 8.0,
        }
    }
}

pub const TIME_STAT_COUNT: usize = 4;

impl FeatureConfig {
    /// Feature dimensionality per sub-window (R_M).
    pub fn feature_dims(&self) -> usize {
        self.bands + TIME_STAT_COUNT
    }

    pub fn blob_shape(&self) -> (usize, usize) {
        (self.sub_windows, self.feature_dims())
    }
}

/// `rows x cols` feature matrix for one frame, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlob {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub frame_index: usize,
    pub channel_index: usize,
}

impl FeatureBlob {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} blob", data.len())));
        }
        Ok(Self {
            rows,
            cols,
            data,
            frame_index: 0,
            channel_index: 0,
        })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Cached FFT plan and filter-bank layout for a fixed frame size.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    frame_size: usize,
    analyzer: SpectrumAnalyzer,
    ranges: Vec<std::ops::Range<usize>>,
}

impl FeatureExtractor {
    pub fn new(cfg: &FeatureConfig, frame_size: usize) -> Result<Self> {
        if cfg.sub_windows == 0 || frame_size % cfg.sub_windows != 0 {
            return Err(config_err(format!(
                "frame size {frame_size} is not divisible into {} sub-windows",
                cfg.sub_windows
            )));
        }
        let sub_len = frame_size / cfg.sub_windows;
        let analyzer = SpectrumAnalyzer::new(sub_len)?;
        let probe = analyzer.analyze(&vec![0.0; sub_len])?;
        let bank = FilterBank::linear(cfg.band_lo_hz, cfg.band_hi_hz, cfg.bands)?;
        let ranges = bank.bin_ranges(&probe)?;
        Ok(Self {
            cfg: cfg.clone(),
            frame_size,
            analyzer,
            ranges,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn extract(&self, frame: &IntensityFrame) -> Result<FeatureBlob> {
        if frame.samples.len() != self.frame_size {
            return Err(Error::Shape(format!(
                "frame has {} samples, extractor expects {}",
                frame.samples.len(),
                self.frame_size
            )));
        }
        let (rows, cols) = self.cfg.blob_shape();
        let sub_len = self.frame_size / rows;
        let mut data = Vec::with_capacity(rows * cols);
        for sub in frame.samples.chunks_exact(sub_len) {
            let spec = self.analyzer.analyze(sub)?;
            data.extend(
                self.ranges
                    .iter()
                    .map(|r| spec.bins[r.clone()].iter().sum::<f64>().max(self.cfg.log_floor).ln()),
            );
            data.extend(transform_stats(time_stats(sub).ok()));
        }
        Ok(FeatureBlob {
            rows,
            cols,
            data,
            frame_index: frame.frame_index,
            channel_index: frame.channel_index,
        })
    }
}

/// Compress the time statistics into comparable ranges; degenerate
/// sub-windows map to zeros.
fn transform_stats(stats: Option<TimeStats>) -> [f64; TIME_STAT_COUNT] {
    match stats {
        Some(s) => [s.kurtosis.asinh(), s.skewness, s.rms.max(1e-12).ln(), s.peak_factor.ln()],
        None => [0.0; TIME_STAT_COUNT],
    }
}

pub fn build_feature_blob(frame: &IntensityFrame, cfg: &FeatureConfig) -> Result<FeatureBlob> {
    FeatureExtractor::new(cfg, frame.samples.len())?.extract(frame)
}

/// Per-feature-column training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub clip: f64,
}

pub const STD_FLOOR: f64 = 1e-8;

pub fn fit_normalizer(blobs: &[FeatureBlob], clip: f64) -> Result<NormalizerStats> {
    if blobs.len() < 2 {
        return Err(config_err("normalizer needs at least two training blobs"));
    }
    let cols = blobs[0].cols;
    if blobs.iter().any(|b| b.cols != cols) {
        return Err(Error::Shape("training blobs differ in width".into()));
    }
    let mut sum = vec![0.0; cols];
    let mut count = 0usize;
    for b in blobs {
        for row in b.data.chunks_exact(cols) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            count += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; cols];
    for b in blobs {
        for row in b.data.chunks_exact(cols) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormalizerStats { mean, std, clip })
}

impl NormalizerStats {
    pub fn identity(cols: usize, clip: f64) -> Self {
        Self {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
            clip,
        }
    }

    fn check(&self, blob: &FeatureBlob) -> Result<()> {
        if blob.cols != self.mean.len() {
            return Err(Error::Shape(format!(
                "blob has {} features, normalizer {}",
                blob.cols,
                self.mean.len()
            )));
        }
        Ok(())
    }

    /// Standardize featurewise without clamping.
    pub fn standardize(&self, blob: &FeatureBlob) -> Result<FeatureBlob> {
        self.check(blob)?;
        let mut out = blob.clone();
        for row in out.data.chunks_exact_mut(blob.cols) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, blob: &FeatureBlob) -> Result<FeatureBlob> {
        self.check(blob)?;
        let mut out = blob.clone();
        for row in out.data.chunks_exact_mut(blob.cols) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = *x * s + m;
            }
        }
        Ok(out)
    }
}

/// `(blob - mean) / std`, clamped to `±clip` standard units.
pub fn normalize_blob(blob: &FeatureBlob, stats: &NormalizerStats) -> Result<FeatureBlob> {
    let mut out = stats.standardize(blob)?;
    for x in &mut out.data {
        *x = x.clamp(-stats.clip, stats.clip);
    }
    Ok(out)
}
