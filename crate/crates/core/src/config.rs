//! Run configuration: one TOML file with a section per stage.
//!
//! Every key is optional and defaults to the reference setup. Unknown keys
//! are rejected. `DYSPHASE_OUT_DIR` and `DYSPHASE_WORKERS` override the
//! corresponding top-level keys.
//!
//! ```toml
//! out_dir = "runs/if"
//! models = ["if", "mag", "mag+if"]
//!
//! [train]
//! max_epochs = 30
//!
//! [cv]
//! folds = 2
//! n_seeds = 1
//! n_splits = 1
//! ```

use crate::corpus::SynthSpec;
use crate::experiment::{CvConfig, ModelConfig};
use crate::featurizer::{FeatureConfig, GammatoneConfig, NormalizationScope, SegmenterParams};
use crate::nn::{CnnConfig, GradCheckConfig, TrainConfig};
use crate::spectral::{MgdParams, StftParams};
use crate::{Error, Result};
use std::path::{Path, PathBuf};

pub const ENV_OUT_DIR: &str = "DYSPHASE_OUT_DIR";
pub const ENV_WORKERS: &str = "DYSPHASE_WORKERS";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Model configurations for `crossval`, e.g. `"if"` or `"mag+if"`.
    pub models: Vec<String>,
    pub stft: StftParams,
    pub mgd: MgdParams,
    pub gammatone: GammatoneConfig,
    pub segment: SegmenterParams,
    pub normalization: NormalizationScope,
    pub train: TrainConfig,
    pub cnn: CnnConfig,
    pub cv: CvConfig,
    pub render: RenderConfig,
    pub synth: SynthSpec,
    pub gradcheck: GradCheckConfig,
}

/// Analysis frames of the rendered figure panels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub stft: StftParams,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::figure(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("dysphase-out"),
            workers: 1,
            models: ["mag", "phase", "mgd", "if", "mag+phase", "mag+mgd", "mag+if", "env+tfs"]
                .map(String::from)
                .to_vec(),
            stft: StftParams::default(),
            mgd: MgdParams::default(),
            gammatone: GammatoneConfig::default(),
            segment: SegmenterParams::default(),
            normalization: NormalizationScope::default(),
            train: TrainConfig::default(),
            cnn: CnnConfig::default(),
            cv: CvConfig::default(),
            render: RenderConfig::default(),
            synth: SynthSpec::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, else the defaults, then applies the
    /// environment overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = get(ENV_OUT_DIR).filter(|s| !s.is_empty()) {
            self.out_dir = PathBuf::from(dir);
        }
        if let Some(w) = get(ENV_WORKERS).filter(|s| !s.is_empty()) {
            self.workers = w
                .parse()
                .ok()
                .filter(|&n: &usize| n >= 1)
                .ok_or_else(|| Error::Config(format!("{ENV_WORKERS} must be a positive integer, got {w:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.features().validate().map_err(cfg)?;
        self.render.stft.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        self.cv.validate()?;
        self.synth.validate().map_err(cfg)?;
        self.model_configs()?;
        Ok(())
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            stft: self.stft,
            mgd: self.mgd,
            gammatone: self.gammatone,
            segment: self.segment,
            normalization: self.normalization,
        }
    }

    pub fn model_configs(&self) -> Result<Vec<ModelConfig>> {
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        self.models
            .iter()
            .map(|m| m.parse().map_err(|e: Error| Error::Config(e.to_string())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
        assert_eq!(RunConfig::from_toml("").unwrap(), d);
        assert_eq!(d.stft.frame_len, 160);
        assert_eq!(d.segment.frames, 50);
        assert_eq!(d.train.batch_size, 128);
        assert_eq!(d.cv.folds, 10);
        assert_eq!(d.model_configs().unwrap().len(), 8);
    }

    #[test]
    fn partial_sections() {
        let c = RunConfig::from_toml("models = [\"if\"]\n[train]\nmax_epochs = 3\n[cv]\nfolds = 2\n").unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.cv.folds, 2);
        assert_eq!(
            c.model_configs().unwrap(),
            vec![ModelConfig::Single(crate::featurizer::Representation::If)]
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[stft]\nframe_length = 160").is_err());
        assert!(RunConfig::from_toml("[nonsense]").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[stft]\nhop = 0").is_err());
        assert!(RunConfig::from_toml("[cv]\nfolds = 1").is_err());
        assert!(RunConfig::from_toml("models = [\"xyz\"]").is_err());
        assert!(RunConfig::from_toml("workers = 0").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut c = RunConfig::default();
        c.apply_env(|k| match k {
            ENV_OUT_DIR => Some("/tmp/x".into()),
            ENV_WORKERS => Some("3".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.workers, 3);
        assert!(c.apply_env(|k| (k == ENV_WORKERS).then(|| "zero".to_string())).is_err());
    }
}
