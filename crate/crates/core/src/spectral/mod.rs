//! STFT analysis and the STFT-domain representations: log-magnitude,
//! wrapped phase, (modified) group delay and instantaneous frequency.
//!
//! All maps are `K x L` with `K = N/2 + 1` one-sided bins in rows and `L`
//! frames in columns.

mod group_delay;
mod phase;
mod stft;

pub use group_delay::{
    cepstral_smooth, group_delay, modified_group_delay, modified_group_delay_with_envelope, signed_power,
};
pub use phase::{instantaneous_frequency, log_magnitude, log_magnitude_floored, phase_spectrum, principal_arg};
pub use stft::{stft, ComplexSpectrogram};

use crate::{Error, Matrix, Result};
use std::fmt;

/// Floor applied to magnitudes before logs and divisions.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hanning,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hanning => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Frame length `N` (also the DFT size), hop and analysis window.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftParams {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    /// 10 ms Hanning frames at 16 kHz without overlap.
    fn default() -> Self {
        Self {
            frame_len: 160,
            hop: 160,
            window: Window::Hanning,
        }
    }
}

impl StftParams {
    /// Parameters used for the figure panels: N = 320, 50% overlap.
    pub fn figure() -> Self {
        Self {
            frame_len: 320,
            hop: 160,
            window: Window::Hanning,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 {
            return Err(Error::InvalidParameter("frame_len must be >= 2".into()));
        }
        if self.hop < 1 || self.hop > self.frame_len {
            return Err(Error::InvalidParameter(format!(
                "hop must lie in [1, {}], got {}",
                self.frame_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Parameters of the modified group delay.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgdParams {
    pub alpha: f64,
    pub gamma: f64,
    /// Cepstral window length in quefrency samples.
    pub lifter_len: usize,
    pub magnitude_floor: f64,
}

impl Default for MgdParams {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            gamma: 0.3,
            lifter_len: 20,
            magnitude_floor: MAGNITUDE_FLOOR,
        }
    }
}

impl MgdParams {
    pub fn validate(&self) -> Result<()> {
        if self.lifter_len < 1 {
            return Err(Error::InvalidParameter("lifter_len must be >= 1".into()));
        }
        if !(self.magnitude_floor > 0.0) {
            return Err(Error::InvalidParameter("magnitude_floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    LogMagnitude,
    Phase,
    GroupDelay,
    Mgd,
    If,
    Envelope,
    FineStructure,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LogMagnitude => "log_magnitude",
            FeatureKind::Phase => "phase",
            FeatureKind::GroupDelay => "group_delay",
            FeatureKind::Mgd => "mgd",
            FeatureKind::If => "if",
            FeatureKind::Envelope => "envelope",
            FeatureKind::FineStructure => "fine_structure",
        }
    }

    /// Closed interval the values are guaranteed to lie in, if any.
    pub fn bounds(self) -> Option<(f64, f64)> {
        use std::f64::consts::PI;
        match self {
            FeatureKind::Phase | FeatureKind::If => Some((-PI, PI)),
            FeatureKind::FineStructure => Some((-1.0, 1.0)),
            FeatureKind::Envelope => Some((0.0, f64::INFINITY)),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Analysis parameters a map was computed with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub frame_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

/// Real `K x L` representation of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Matrix<f64>,
    pub kind: FeatureKind,
    pub provenance: Provenance,
}

impl FeatureMap {
    pub fn n_bins(&self) -> usize {
        self.values.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
