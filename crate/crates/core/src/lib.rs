//! Event recognition for distributed fiber-optic vibration sensors.
//!
//! The crate covers the full chain from raw per-channel intensity streams to
//! signal-event tracks: synthetic stream generation ([`siggen`]), framing and
//! adaptive filtering ([`framing`]), decision statistics ([`features`]), a
//! small CNN engine ([`tensornet`]), the three-member ensemble and its fusion
//! rules ([`ensemble`]), training ([`training`]), metrics ([`metrics`]),
//! feature-space analysis ([`embedding`]), architecture search
//! ([`archsearch`]) and track formation ([`tracker`]).

pub mod archsearch;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod framing;
pub mod metrics;
pub mod pipeline;
pub mod siggen;
pub mod tensornet;
pub mod tracker;
pub mod training;

pub use error::{Error, ErrorCategory, Result};

/// Per-channel ADC sampling rate.
pub const SAMPLE_RATE_HZ: f64 = 1666.0;

/// Highest representable frequency at [`SAMPLE_RATE_HZ`].
pub const NYQUIST_HZ: f64 = SAMPLE_RATE_HZ / 2.0;

/// Number of recognized signal classes; class 0 is background jamming.
pub const NUM_CLASSES: usize = 7;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "jamming",
    "leakage",
    "hand-digging",
    "excavation",
    "drilling",
    "welding",
    "grinding",
];

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
