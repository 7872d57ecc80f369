use super::{segment_normalized, FeatureSegment, NormalizationScope, SegmentOrigin, SegmenterParams};
use crate::auditory::{self, design_gammatone_bank_with_order, envelope_fine_structure};
use crate::corpus::{load_wav, resample_to_analysis_rate, AudioClip, CorpusManifest, ANALYSIS_RATE};
use crate::spectral::{
    instantaneous_frequency, log_magnitude, modified_group_delay, phase_spectrum, stft, FeatureMap, MgdParams,
    StftParams,
};
use crate::{Error, Result};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// Classifier input representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Representation {
    Magnitude,
    Phase,
    Mgd,
    If,
    Envelope,
    FineStructure,
}

impl Representation {
    pub const ALL: [Representation; 6] = [
        Representation::Magnitude,
        Representation::Phase,
        Representation::Mgd,
        Representation::If,
        Representation::Envelope,
        Representation::FineStructure,
    ];

    /// Short name used on the command line and in file names.
    pub fn short_name(self) -> &'static str {
        match self {
            Representation::Magnitude => "mag",
            Representation::Phase => "phase",
            Representation::Mgd => "mgd",
            Representation::If => "if",
            Representation::Envelope => "env",
            Representation::FineStructure => "tfs",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Representation::Magnitude => "Magnitude",
            Representation::Phase => "Phase",
            Representation::Mgd => "MGD",
            Representation::If => "IF",
            Representation::Envelope => "Envelope",
            Representation::FineStructure => "Fine structure",
        }
    }

    fn is_auditory(self) -> bool {
        matches!(self, Representation::Envelope | Representation::FineStructure)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Representation::ALL
            .into_iter()
            .find(|r| r.short_name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown representation {s:?} (expected mag, phase, mgd, if, env or tfs)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammatoneConfig {
    pub n_bands: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub order: usize,
    /// Sub-sampling window and hop, in samples.
    pub win: usize,
    pub hop: usize,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            n_bands: 81,
            fmin: auditory::DEFAULT_FMIN,
            fmax: auditory::DEFAULT_FMAX,
            order: auditory::DEFAULT_ORDER,
            win: 160,
            hop: 160,
        }
    }
}

/// Every parameter needed to turn an utterance into classifier segments.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub stft: StftParams,
    pub mgd: MgdParams,
    pub gammatone: GammatoneConfig,
    pub segment: SegmenterParams,
    pub normalization: NormalizationScope,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mgd.validate()?;
        self.segment.validate()
    }
}

/// Computes the requested maps for one clip (resampled to 16 kHz first).
/// The STFT and the filter bank are each run at most once.
pub fn extract_maps(clip: &AudioClip, reps: &[Representation], cfg: &FeatureConfig) -> Result<Vec<FeatureMap>> {
    let clip = resample_to_analysis_rate(clip)?;
    let needs_stft = reps.iter().any(|r| {
        matches!(
            r,
            Representation::Magnitude | Representation::Phase | Representation::If
        )
    });
    let spec = if needs_stft {
        Some(stft(&clip, &cfg.stft)?)
    } else {
        None
    };
    let auditory = if reps.iter().any(|r| r.is_auditory()) {
        let g = &cfg.gammatone;
        let bank = design_gammatone_bank_with_order(g.n_bands, g.fmin, g.fmax, ANALYSIS_RATE, g.order)?;
        Some(envelope_fine_structure(&clip, &bank, g.win, g.hop)?)
    } else {
        None
    };
    reps.iter()
        .map(|rep| {
            Ok(match rep {
                Representation::Magnitude => log_magnitude(spec.as_ref().expect("stft")),
                Representation::Phase => phase_spectrum(spec.as_ref().expect("stft")),
                Representation::If => instantaneous_frequency(spec.as_ref().expect("stft"))?,
                Representation::Mgd => modified_group_delay(&clip, &cfg.stft, &cfg.mgd)?,
                Representation::Envelope => auditory.as_ref().expect("auditory").0.clone(),
                Representation::FineStructure => auditory.as_ref().expect("auditory").1.clone(),
            })
        })
        .collect()
}

/// Extracts normalized segments for every manifest entry and representation.
///
/// Returns one segment list per entry of `reps`, each in manifest order.
/// Runs on `workers` threads; output does not depend on the worker count.
pub fn extract_corpus(
    manifest: &CorpusManifest,
    reps: &[Representation],
    cfg: &FeatureConfig,
    workers: usize,
) -> Result<Vec<Vec<FeatureSegment>>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let per_entry: Vec<Vec<Vec<FeatureSegment>>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| {
                let clip = load_wav(&entry.path)?;
                let maps = extract_maps(&clip, reps, cfg)?;
                let origin = SegmentOrigin {
                    speaker_id: entry.speaker_id.clone(),
                    label: entry.label,
                    utterance_id: entry.path.display().to_string(),
                };
                Ok(maps
                    .iter()
                    .map(|m| segment_normalized(m, &cfg.segment, cfg.normalization, &origin))
                    .collect())
            })
            .collect::<Result<_>>()
    })?;

    let mut out: Vec<Vec<FeatureSegment>> = vec![Vec::new(); reps.len()];
    for entry in per_entry {
        for (dst, segs) in out.iter_mut().zip(entry) {
            dst.extend(segs);
        }
    }
    Ok(out)
}
