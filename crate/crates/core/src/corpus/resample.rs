use super::{AudioClip, ANALYSIS_RATE};
use crate::{Error, Result};
use std::f64::consts::PI;

const TAPS_PER_PHASE: usize = 64;
const HALF_WIDTH: f64 = (TAPS_PER_PHASE / 2) as f64;
const KAISER_BETA: f64 = 8.0;
/// Largest interpolation factor for which the full phase table is precomputed.
const MAX_TABLE_PHASES: u64 = 4096;

/// Polyphase windowed-sinc resampling (64 taps per phase, Kaiser window with
/// beta = 8, cutoff at 0.45 of the lower of the two rates).
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter("target sample rate must be positive".into()));
    }
    let source_rate = clip.sample_rate;
    if source_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let cutoff = 0.45 * source_rate.min(target_rate) as f64 / source_rate as f64;

    let n_in = clip.samples.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;

    let table = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|phase| phase_taps(phase as f64 / up as f64, cutoff))
            .collect::<Vec<_>>()
    });

    let x = &clip.samples;
    let mut out = Vec::with_capacity(n_out);
    let mut scratch;
    for m in 0..n_out as u64 {
        let pos = m * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let taps: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                scratch = phase_taps(phase as f64 / up as f64, cutoff);
                &scratch
            }
        };
        let mut acc = 0.0;
        for (k, &h) in taps.iter().enumerate() {
            let j = base + k as i64 - (TAPS_PER_PHASE as i64 / 2 - 1);
            if j >= 0 && (j as u64) < n_in {
                acc += h * x[j as usize];
            }
        }
        out.push(acc);
    }

    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        speaker_id: clip.speaker_id.clone(),
        label: clip.label,
    })
}

/// Resamples to 16 kHz when needed.
pub fn resample_to_analysis_rate(clip: &AudioClip) -> Result<AudioClip> {
    resample(clip, ANALYSIS_RATE)
}

/// Taps for fractional delay `frac` in [0, 1). Tap `k` multiplies input
/// sample `base + k - 31`; each phase is normalized to unit DC gain.
fn phase_taps(frac: f64, cutoff: f64) -> Vec<f64> {
    let i0_beta = bessel_i0(KAISER_BETA);
    let mut taps: Vec<f64> = (0..TAPS_PER_PHASE)
        .map(|k| {
            let t = frac - (k as f64 - (TAPS_PER_PHASE as f64 / 2.0 - 1.0));
            let r = t / HALF_WIDTH;
            if r.abs() >= 1.0 {
                return 0.0;
            }
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
            2.0 * cutoff * sinc(2.0 * cutoff * t) * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    if sum != 0.0 {
        taps.iter_mut().for_each(|h| *h /= sum);
    }
    taps
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let half_sq = (x / 2.0) * (x / 2.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
