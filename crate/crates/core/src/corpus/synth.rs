//! Deterministic two-class synthetic corpus.
//!
//! Class 0 is a steady five-harmonic complex. Class 1 uses the same source
//! with a bounded random walk on f0, a ~5 Hz amplitude tremor and added
//! breath noise. This is a desk-scale stand-in for real recordings, not a
//! model of dysarthria.

use super::{
    write_manifest, write_wav, AudioClip, CorpusManifest, Label, ManifestEntry, ManifestSource, WavEncoding,
    ANALYSIS_RATE,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::path::Path;

const HARMONICS: usize = 5;
/// SNR of the background noise added to both classes.
const MILD_NOISE_SNR_DB: f64 = 35.0;
/// The f0 random walk takes one step every this many samples (5 ms).
const JITTER_STEP: usize = 80;
const TREMOR_HZ: f64 = 5.0;
const PEAK: f64 = 0.8;
/// Relative bound of the per-speaker f0 offset.
const SPEAKER_F0_SPREAD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_speakers_per_class: usize,
    pub utterances_per_speaker: usize,
    pub utterance_seconds: f64,
    pub f0_base: f64,
    /// Bound of the relative f0 random walk, in percent.
    pub jitter_pct: f64,
    pub tremor_depth: f64,
    /// SNR of the class-1 breath noise.
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers_per_class: 10,
            utterances_per_speaker: 2,
            utterance_seconds: 4.0,
            f0_base: 200.0,
            jitter_pct: 6.0,
            tremor_depth: 0.5,
            noise_snr_db: 10.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_speakers_per_class < 1 {
            return bad("n_speakers_per_class must be >= 1");
        }
        if self.utterances_per_speaker < 1 {
            return bad("utterances_per_speaker must be >= 1");
        }
        if !(self.utterance_seconds > 0.0) {
            return bad("utterance_seconds must be > 0");
        }
        if !(0.0..=1.0).contains(&self.tremor_depth) {
            return bad("tremor_depth must lie in [0, 1]");
        }
        if !(self.f0_base > 0.0) || self.f0_base * HARMONICS as f64 * 1.2 >= ANALYSIS_RATE as f64 / 2.0 {
            return bad("f0_base must be positive and keep all harmonics below Nyquist");
        }
        if !(self.jitter_pct >= 0.0 && self.jitter_pct < 50.0) {
            return bad("jitter_pct must lie in [0, 50)");
        }
        Ok(())
    }
}

struct SpeakerPlan {
    index: u64,
    id: String,
    label: Label,
}

/// Writes the corpus WAVs (16-bit, 16 kHz) and `manifest.csv` into `out_dir`
/// and returns the manifest. Output depends only on `spec`.
pub fn synthesize_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n = spec.n_speakers_per_class;
    let speakers: Vec<SpeakerPlan> = [Label::Neurotypical, Label::Dysarthric]
        .iter()
        .flat_map(|&label| {
            let prefix = if label == Label::Neurotypical { "nt" } else { "dy" };
            (0..n).map(move |i| SpeakerPlan {
                index: (label.index() * n + i) as u64,
                id: format!("{prefix}{i:03}"),
                label,
            })
        })
        .collect();

    let per_speaker: Vec<Vec<ManifestEntry>> = speakers
        .par_iter()
        .map(|sp| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(sp.index);
            let f0 = spec.f0_base * (1.0 + rng.random_range(-SPEAKER_F0_SPREAD..SPEAKER_F0_SPREAD));
            let tremor_hz = TREMOR_HZ * (1.0 + rng.random_range(-0.1..0.1));
            (0..spec.utterances_per_speaker)
                .map(|u| {
                    let samples = synth_utterance(spec, sp.label, f0, tremor_hz, &mut rng);
                    let clip = AudioClip::new(samples, ANALYSIS_RATE)?.with_speaker(sp.id.clone(), Some(sp.label));
                    let path = out_dir.join(format!("{}_u{:02}.wav", sp.id, u));
                    write_wav(&path, &clip, WavEncoding::Int16)?;
                    Ok(ManifestEntry {
                        path,
                        speaker_id: sp.id.clone(),
                        label: sp.label,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let manifest = CorpusManifest::new(per_speaker.into_iter().flatten().collect(), ManifestSource::Synthetic)?;
    write_manifest(&manifest, out_dir.join("manifest.csv"), Some(out_dir))?;
    Ok(manifest)
}

fn synth_utterance(spec: &SynthSpec, label: Label, f0: f64, tremor_hz: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = ANALYSIS_RATE as f64;
    let n = (spec.utterance_seconds * fs).round() as usize;
    let dysarthric = label == Label::Dysarthric;
    let jitter = spec.jitter_pct / 100.0;

    // Relative f0 deviation, one knot per JITTER_STEP samples.
    let n_knots = n / JITTER_STEP + 2;
    let mut knots = vec![0.0; n_knots];
    if dysarthric && jitter > 0.0 {
        let mut dev: f64 = 0.0;
        for k in knots.iter_mut() {
            let step: f64 = rng.sample(StandardNormal);
            dev = (dev + step * jitter / 3.0).clamp(-jitter, jitter);
            *k = dev;
        }
    }
    let tremor_phase = rng.random_range(0.0..2.0 * PI);

    let mut phase = rng.random_range(0.0..2.0 * PI);
    let mut voiced = Vec::with_capacity(n);
    for i in 0..n {
        let pos = i as f64 / JITTER_STEP as f64;
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        let dev = knots[k] * (1.0 - frac) + knots[k + 1] * frac;
        phase += 2.0 * PI * f0 * (1.0 + dev) / fs;
        let mut v: f64 = (1..=HARMONICS).map(|h| (h as f64 * phase).sin() / h as f64).sum();
        if dysarthric {
            let t = i as f64 / fs;
            let m = 0.5 + 0.5 * (2.0 * PI * tremor_hz * t + tremor_phase).sin();
            v *= 1.0 - spec.tremor_depth * m;
        }
        voiced.push(v);
    }

    let power = voiced.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
    let snr = if dysarthric {
        spec.noise_snr_db
    } else {
        MILD_NOISE_SNR_DB
    };
    let noise_std = (power / 10f64.powf(snr / 10.0)).sqrt();
    let mut out: Vec<f64> = voiced
        .into_iter()
        .map(|v| {
            let e: f64 = rng.sample(StandardNormal);
            v + noise_std * e
        })
        .collect();

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    out
}
