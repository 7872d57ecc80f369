//! # dysphase
//!
//! Magnitude and phase spectro-temporal representations of speech, and
//! convolutional classifiers trained on them to separate neurotypical from
//! dysarthric speakers.
//!
//! The pipeline is split into independent stages:
//!
//! ```text
//! WAV / manifest -> representations -> K x B segments -> CNN -> speaker scores -> AUC / accuracy
//! (corpus)          (spectral,          (featurizer)       (nn)   (experiment)
//!                    auditory)
//! ```
//!
//! - [`corpus`]: WAV I/O, resampling, CSV manifests and a deterministic
//!   synthetic two-class corpus.
//! - [`spectral`]: STFT, log-magnitude, wrapped phase, group delay, modified
//!   group delay and instantaneous frequency.
//! - [`auditory`]: gammatone filter bank, analytic signal and sub-sampled
//!   temporal envelope / fine structure maps.
//! - [`featurizer`]: segmentation into fixed-width windows, normalization and
//!   the binary segment cache.
//! - [`nn`]: a small CNN engine (forward, backward, SGD) with the single- and
//!   dual-input architectures and a finite-difference gradient checker.
//! - [`experiment`]: speaker-independent stratified cross-validation, soft
//!   voting, metrics and report files.
//!
//! ```no_run
//! use dysphase::corpus::load_wav;
//! use dysphase::spectral::{instantaneous_frequency, stft, StftParams};
//!
//! let clip = load_wav("utterance.wav")?;
//! let spec = stft(&clip, &StftParams::default())?;
//! let if_map = instantaneous_frequency(&spec)?;
//! println!("{} x {}", if_map.n_bins(), if_map.n_frames());
//! # Ok::<(), dysphase::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auditory;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod featurizer;
pub mod matrix;
pub mod nn;
pub mod render;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::Matrix;
