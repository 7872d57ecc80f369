//! Audio ingestion, manifests and the synthetic corpus generator.

mod manifest;
mod resample;
mod synth;
mod wav;

pub use manifest::{load_manifest, write_manifest, CorpusManifest, ManifestEntry, ManifestSource};
pub use resample::{resample, resample_to_analysis_rate};
pub use synth::{synthesize_corpus, SynthSpec};
pub use wav::{load_wav, write_wav, WavEncoding};

use crate::{Error, Result};
use std::fmt;

/// Sample rate every representation is computed at.
pub const ANALYSIS_RATE: u32 = 16_000;

/// Speaker class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Neurotypical = 0,
    Dysarthric = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(Label::Neurotypical),
            1 => Some(Label::Dysarthric),
            _ => None,
        }
    }

    /// Parses a manifest label token: `0`/`1` or the class name.
    pub fn parse(token: &str) -> Option<Self> {
        match token.trim() {
            "0" | "neurotypical" => Some(Label::Neurotypical),
            "1" | "dysarthric" => Some(Label::Dysarthric),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Mono PCM audio with its sample rate and optional speaker metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub speaker_id: String,
    pub label: Option<Label>,
}

impl AudioClip {
    /// Builds an unlabeled clip, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            speaker_id: String::new(),
            label: None,
        })
    }

    pub fn with_speaker(mut self, speaker_id: impl Into<String>, label: Option<Label>) -> Self {
        self.speaker_id = speaker_id.into();
        self.label = label;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_zero_rate() {
        assert!(AudioClip::new(vec![0.0, f64::NAN], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
        assert!(AudioClip::new(vec![0.0], 16000).is_ok());
    }

    #[test]
    fn label_tokens() {
        assert_eq!(Label::parse("1"), Some(Label::Dysarthric));
        assert_eq!(Label::parse(" neurotypical "), Some(Label::Neurotypical));
        assert_eq!(Label::parse("2"), None);
    }
}
