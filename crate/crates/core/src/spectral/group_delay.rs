//! Group delay via the ramp-weighted frame, cepstral smoothing, and the
//! modified group delay.
//!
//! With `S` the DFT of the windowed frame `w(n) s(n)` and `Y` the DFT of
//! `n w(n) s(n)` (`n = 0..N-1` within the frame), the group delay is
//! `(S_r Y_r + S_i Y_i) / |S|^2`. The modified group delay replaces `|S|^2`
//! by `Ŝ^(2 gamma)` (cepstrally smoothed magnitude) and compresses the
//! result with a signed power `alpha`.

use super::stft::framewise_multi;
use super::{FeatureKind, FeatureMap, MgdParams, Provenance, StftParams};
use crate::corpus::AudioClip;
use crate::{Error, Matrix, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

fn ramp_spectra(clip: &AudioClip, params: &StftParams) -> Result<(Matrix<Complex64>, Matrix<Complex64>)> {
    let mut mats = framewise_multi(clip, params, 2, |_, frame| {
        let ramp = frame.iter().enumerate().map(|(n, &v)| v * n as f64).collect();
        vec![frame, ramp]
    })?;
    let y = mats.pop().expect("ramp spectrum");
    let s = mats.pop().expect("frame spectrum");
    Ok((s, y))
}

fn provenance(clip: &AudioClip, params: &StftParams) -> Provenance {
    Provenance {
        frame_len: params.frame_len,
        hop: params.hop,
        sample_rate: clip.sample_rate,
    }
}

/// `S_r Y_r + S_i Y_i`.
fn numerator(s: Complex64, y: Complex64) -> f64 {
    s.re * y.re + s.im * y.im
}

/// Group delay in samples; the denominator is `max(|S|^2, floor)`.
pub fn group_delay(clip: &AudioClip, params: &StftParams, floor: f64) -> Result<FeatureMap> {
    let (s, y) = ramp_spectra(clip, params)?;
    let values = Matrix::from_fn(s.rows(), s.cols(), |k, l| {
        let sv = s[(k, l)];
        numerator(sv, y[(k, l)]) / sv.norm_sqr().max(floor)
    });
    Ok(FeatureMap {
        values,
        kind: FeatureKind::GroupDelay,
        provenance: provenance(clip, params),
    })
}

/// `sign(x) |x|^alpha`, with `sign(0) = 0`.
pub fn signed_power(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(alpha)
    }
}

/// Cepstrally smoothed magnitude of one frame.
///
/// `mag` holds the `K = N/2 + 1` one-sided magnitudes of an even-length DFT.
/// The log-magnitude is mirrored to `N` points, transformed to the real
/// cepstrum, and every quefrency with `min(q, N - q) < lifter_len` is kept
/// (at `lifter_len = N/2` the whole cepstrum is kept, including `q = N/2`).
pub fn cepstral_smooth(mag: &[f64], lifter_len: usize, floor: f64) -> Result<Vec<f64>> {
    let k = mag.len();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "cepstral smoothing needs at least 2 bins".into(),
        ));
    }
    let n = 2 * (k - 1);
    if lifter_len < 1 || lifter_len > n / 2 {
        return Err(Error::InvalidParameter(format!(
            "lifter_len must lie in [1, {}], got {lifter_len}",
            n / 2
        )));
    }
    let mut planner = FftPlanner::<f64>::new();
    let inverse = planner.plan_fft_inverse(n);
    let forward = planner.plan_fft_forward(n);

    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| {
            let bin = if i < k { i } else { n - i };
            Complex64::new(mag[bin].max(floor).ln(), 0.0)
        })
        .collect();
    inverse.process(&mut buf);
    let scale = 1.0 / n as f64;
    for (q, c) in buf.iter_mut().enumerate() {
        let keep = q.min(n - q) < lifter_len || lifter_len == n / 2;
        *c = if keep {
            Complex64::new(c.re * scale, 0.0)
        } else {
            Complex64::default()
        };
    }
    forward.process(&mut buf);
    Ok(buf[..k].iter().map(|c| c.re.exp()).collect())
}

/// Modified group delay with the cepstrally smoothed magnitude of each frame.
pub fn modified_group_delay(clip: &AudioClip, params: &StftParams, mgd: &MgdParams) -> Result<FeatureMap> {
    mgd.validate()?;
    if !params.frame_len.is_multiple_of(2) {
        return Err(Error::InvalidParameter(
            "modified group delay needs an even frame length".into(),
        ));
    }
    let (s, y) = ramp_spectra(clip, params)?;
    let mut smoothed = Matrix::zeros(s.rows(), s.cols());
    for l in 0..s.cols() {
        let mag: Vec<f64> = s.column(l).iter().map(|c| c.norm()).collect();
        smoothed.set_column(l, &cepstral_smooth(&mag, mgd.lifter_len, mgd.magnitude_floor)?);
    }
    Ok(mgd_from_parts(&s, &y, &smoothed, mgd, provenance(clip, params)))
}

/// Modified group delay with a caller-supplied smoothed magnitude `Ŝ` (`K x L`).
pub fn modified_group_delay_with_envelope(
    clip: &AudioClip,
    params: &StftParams,
    mgd: &MgdParams,
    envelope: &Matrix<f64>,
) -> Result<FeatureMap> {
    mgd.validate()?;
    let (s, y) = ramp_spectra(clip, params)?;
    if (envelope.rows(), envelope.cols()) != (s.rows(), s.cols()) {
        return Err(Error::DimensionMismatch(format!(
            "envelope is {}x{}, spectrogram is {}x{}",
            envelope.rows(),
            envelope.cols(),
            s.rows(),
            s.cols()
        )));
    }
    Ok(mgd_from_parts(&s, &y, envelope, mgd, provenance(clip, params)))
}

fn mgd_from_parts(
    s: &Matrix<Complex64>,
    y: &Matrix<Complex64>,
    smoothed: &Matrix<f64>,
    mgd: &MgdParams,
    provenance: Provenance,
) -> FeatureMap {
    let values = Matrix::from_fn(s.rows(), s.cols(), |k, l| {
        let denom = smoothed[(k, l)].powf(2.0 * mgd.gamma).max(mgd.magnitude_floor);
        signed_power(numerator(s[(k, l)], y[(k, l)]) / denom, mgd.alpha)
    });
    FeatureMap {
        values,
        kind: FeatureKind::Mgd,
        provenance,
    }
}
