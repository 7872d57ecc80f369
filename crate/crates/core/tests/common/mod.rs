//! Oracles shared by the integration tests.

use dysphase::corpus::AudioClip;
use dysphase::spectral::{stft, StftParams, Window};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn direct_dft(frame: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            frame
                .iter()
                .enumerate()
                .map(|(i, &v)| Complex64::from_polar(v, -2.0 * PI * ((k * i) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Runs the comparison over 50 random clips and returns the worst
/// coefficient error and the worst Parseval error (both relative to the
/// frame energy scale).
#[allow(dead_code)]
pub fn stft_oracle_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_coef, mut worst_parseval) = (0.0f64, 0.0f64);
    for clip_idx in 0..50 {
        let (n, hop) = [(160, 160), (320, 160), (256, 64), (160, 80)][clip_idx % 4];
        let window = if clip_idx % 5 == 0 {
            Window::Rectangular
        } else {
            Window::Hanning
        };
        let len = rng.random_range(n..4 * n);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = StftParams {
            frame_len: n,
            hop,
            window,
        };
        let spec = stft(&AudioClip::new(x.clone(), 16000).unwrap(), &params).unwrap();
        let w = match window {
            Window::Hanning => hann(n),
            Window::Rectangular => vec![1.0; n],
        };
        assert_eq!(spec.n_frames(), (len - n) / hop + 1);
        for l in 0..spec.n_frames() {
            let frame: Vec<f64> = (0..n).map(|i| w[i] * x[l * hop + i]).collect();
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            let scale = energy.sqrt().max(1.0);
            let oracle = direct_dft(&frame);
            for (k, o) in oracle.iter().enumerate() {
                worst_coef = worst_coef.max((spec.coeffs[(k, l)] - o).norm() / scale);
            }
            // Parseval on the one-sided spectrum: interior bins count twice.
            let spectral: f64 = (0..=n / 2)
                .map(|k| {
                    let m = spec.coeffs[(k, l)].norm_sqr();
                    if k == 0 || (n % 2 == 0 && k == n / 2) {
                        m
                    } else {
                        2.0 * m
                    }
                })
                .sum::<f64>()
                / n as f64;
            worst_parseval = worst_parseval.max((spectral - energy).abs() / energy.max(1.0));
        }
    }
    (worst_coef, worst_parseval)
}
