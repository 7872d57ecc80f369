//! Magnitude, phase, group delay, MGD and IF of a two-formant vowel-like
//! signal, with the value range of each map.

use dysphase::corpus::AudioClip;
use dysphase::spectral::{
    group_delay, instantaneous_frequency, log_magnitude, modified_group_delay, phase_spectrum, stft, FeatureMap,
    MgdParams, StftParams, MAGNITUDE_FLOOR,
};
use std::f64::consts::PI;

fn vowel(seconds: f64) -> AudioClip {
    let n = (seconds * 16000.0) as usize;
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / 16000.0;
            (1..=20)
                .map(|h| {
                    let f = 125.0 * h as f64;
                    let gain = (-((f - 700.0) / 250.0).powi(2)).exp() + 0.6 * (-((f - 1800.0) / 300.0).powi(2)).exp();
                    0.2 * gain * (2.0 * PI * f * t).sin()
                })
                .sum()
        })
        .collect();
    AudioClip::new(x, 16000).unwrap()
}

fn show(name: &str, m: &FeatureMap) {
    let (lo, hi) = m.min_max();
    println!(
        "{name:<16} {:>3} x {:<4} [{lo:>9.3}, {hi:>9.3}]",
        m.n_bins(),
        m.n_frames()
    );
}

fn main() -> dysphase::Result<()> {
    let clip = vowel(1.0);
    let params = StftParams::default();
    let spec = stft(&clip, &params)?;
    show("log magnitude", &log_magnitude(&spec));
    show("phase", &phase_spectrum(&spec));
    show("group delay", &group_delay(&clip, &params, MAGNITUDE_FLOOR)?);
    show("MGD", &modified_group_delay(&clip, &params, &MgdParams::default())?);
    let inf = instantaneous_frequency(&spec)?;
    show("IF", &inf);

    // Bins under a harmonic advance their phase consistently, so the IF
    // there is close to the harmonic's offset from the bin centre.
    let l = inf.n_frames() / 2;
    for k in [5usize, 7, 10] {
        let expected = {
            let f = 125.0 * (k as f64 * 100.0 / 125.0).round();
            let d = 2.0 * PI * (f - k as f64 * 100.0) * params.hop as f64 / 16000.0;
            (d + PI).rem_euclid(2.0 * PI) - PI
        };
        println!(
            "bin {k:>2}: IF {:+.3}  nearest-harmonic offset {expected:+.3}",
            inf.values[(k, l)]
        );
    }
    Ok(())
}
