//! Gammatone filter bank, analytic signal, and sub-sampled temporal envelope
//! and fine-structure maps.
//!
//! Each band is an all-pole gammatone approximation: `order` identical
//! two-pole resonators in cascade, pole radius `exp(-2 pi b / fs)` with
//! `b = 1.019 ERB(fc)`, normalized to unit gain at the center frequency.
//! Filtering is causal with zero initial state.

use crate::corpus::AudioClip;
use crate::spectral::{FeatureKind, FeatureMap, Provenance};
use crate::{Error, Matrix, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_FMIN: f64 = 50.0;
pub const DEFAULT_FMAX: f64 = 7800.0;
const BANDWIDTH_FACTOR: f64 = 1.019;

/// Equivalent rectangular bandwidth (Glasberg & Moore), Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneBank {
    pub order: usize,
    pub center_freqs: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub sample_rate: u32,
}

impl GammatoneBank {
    pub fn n_bands(&self) -> usize {
        self.center_freqs.len()
    }

    /// `(a1, a2, stage_gain)` of band `k`'s resonator.
    fn coefficients(&self, k: usize) -> (f64, f64, f64) {
        let fs = self.sample_rate as f64;
        let r = (-2.0 * PI * self.bandwidths[k] / fs).exp();
        let theta = 2.0 * PI * self.center_freqs[k] / fs;
        let a1 = -2.0 * r * theta.cos();
        let a2 = r * r;
        let z1 = Complex64::from_polar(1.0, -theta);
        let gain = (1.0 + a1 * z1 + a2 * z1 * z1).norm();
        (a1, a2, gain)
    }

    /// Complex frequency response of band `k` at `freq` Hz.
    pub fn response(&self, k: usize, freq: f64) -> Complex64 {
        let (a1, a2, g) = self.coefficients(k);
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / self.sample_rate as f64);
        let stage = g / (1.0 + a1 * z1 + a2 * z1 * z1);
        stage.powi(self.order as i32)
    }

    /// Filters `x` through band `k`.
    pub fn filter_band(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let (a1, a2, g) = self.coefficients(k);
        let mut y = x.to_vec();
        for _ in 0..self.order {
            let (mut y1, mut y2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let out = g * *v - a1 * y1 - a2 * y2;
                y2 = y1;
                y1 = out;
                *v = out;
            }
        }
        y
    }
}

/// `k` fourth-order bands with centers equally spaced on the ERB-rate scale
/// from `fmin` to `fmax` inclusive.
pub fn design_gammatone_bank(k: usize, fmin: f64, fmax: f64, fs: u32) -> Result<GammatoneBank> {
    design_gammatone_bank_with_order(k, fmin, fmax, fs, DEFAULT_ORDER)
}

pub fn design_gammatone_bank_with_order(
    k: usize,
    fmin: f64,
    fmax: f64,
    fs: u32,
    order: usize,
) -> Result<GammatoneBank> {
    let nyquist = fs as f64 / 2.0;
    if !(fmin > 0.0 && fmin < fmax && fmax < nyquist) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < fmin < fmax < fs/2, got fmin={fmin}, fmax={fmax}, fs={fs}"
        )));
    }
    if k == 0 || order == 0 {
        return Err(Error::InvalidParameter("band count and order must be >= 1".into()));
    }
    let (lo, hi) = (erb_rate(fmin), erb_rate(fmax));
    let center_freqs: Vec<f64> = (0..k)
        .map(|i| match i {
            0 => fmin,
            i if i == k - 1 => fmax,
            i => erb_rate_to_hz(lo + (hi - lo) * i as f64 / (k - 1) as f64),
        })
        .collect();
    let bandwidths = center_freqs.iter().map(|&f| BANDWIDTH_FACTOR * erb(f)).collect();
    Ok(GammatoneBank {
        order,
        center_freqs,
        bandwidths,
        sample_rate: fs,
    })
}

/// Band-pass outputs `s^c_k(n)`, one clip-length sequence per band.
pub fn apply_bank(clip: &AudioClip, bank: &GammatoneBank) -> Result<Vec<Vec<f64>>> {
    if clip.sample_rate != bank.sample_rate {
        return Err(Error::RateMismatch {
            expected: bank.sample_rate,
            got: clip.sample_rate,
        });
    }
    Ok((0..bank.n_bands())
        .into_par_iter()
        .map(|k| bank.filter_band(k, &clip.samples))
        .collect())
}

/// Analytic signal by the DFT method: negative frequencies zeroed, positive
/// ones doubled, DC and Nyquist kept once.
pub fn analytic_signal(x: &[f64]) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidParameter("analytic signal of an empty sequence".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (i, c) in buf.iter_mut().enumerate() {
        let h = if i == 0 || (n.is_multiple_of(2) && i == half) {
            1.0
        } else if i <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= h / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf)
}

/// Temporal envelope `|s^a_k|` and fine structure `cos(arg s^a_k)` of every
/// band, averaged over windows of `win` samples taken every `hop` samples.
///
/// The fine structure is 0 wherever the analytic sample is exactly 0.
pub fn envelope_fine_structure(
    clip: &AudioClip,
    bank: &GammatoneBank,
    win: usize,
    hop: usize,
) -> Result<(FeatureMap, FeatureMap)> {
    if win == 0 || hop == 0 {
        return Err(Error::InvalidParameter("window and hop must be >= 1".into()));
    }
    if clip.len() < win {
        return Err(Error::TooShort {
            needed: win,
            got: clip.len(),
        });
    }
    let frames = (clip.len() - win) / hop + 1;
    let bands = apply_bank(clip, bank)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = bands
        .par_iter()
        .map(|band| {
            let z = analytic_signal(band)?;
            let env: Vec<f64> = z.iter().map(|c| c.norm()).collect();
            let fine: Vec<f64> = z
                .iter()
                .zip(&env)
                .map(|(c, &m)| if m == 0.0 { 0.0 } else { (c.re / m).clamp(-1.0, 1.0) })
                .collect();
            Ok((
                window_means(&env, win, hop, frames),
                window_means(&fine, win, hop, frames),
            ))
        })
        .collect::<Result<_>>()?;

    let k = bank.n_bands();
    let mut env_map = Matrix::zeros(k, frames);
    let mut fine_map = Matrix::zeros(k, frames);
    for (i, (e, f)) in rows.into_iter().enumerate() {
        env_map.row_mut(i).copy_from_slice(&e);
        fine_map.row_mut(i).copy_from_slice(&f);
    }
    let provenance = Provenance {
        frame_len: win,
        hop,
        sample_rate: clip.sample_rate,
    };
    Ok((
        FeatureMap {
            values: env_map,
            kind: FeatureKind::Envelope,
            provenance,
        },
        FeatureMap {
            values: fine_map,
            kind: FeatureKind::FineStructure,
            provenance,
        },
    ))
}

fn window_means(x: &[f64], win: usize, hop: usize, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|l| x[l * hop..l * hop + win].iter().sum::<f64>() / win as f64)
        .collect()
}
