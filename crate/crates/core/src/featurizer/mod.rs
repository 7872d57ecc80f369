//! Fixed-width segmentation, normalization, per-utterance feature extraction
//! and the binary segment cache.

mod cache;
mod extract;

pub use cache::{cache_read, cache_write, CACHE_MAGIC, CACHE_VERSION};
pub use extract::{extract_corpus, extract_maps, FeatureConfig, GammatoneConfig, Representation};

use crate::corpus::Label;
use crate::spectral::FeatureMap;
use crate::Matrix;

/// Lower bound on the standard deviation used when normalizing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterParams {
    /// Frames per segment (`B`).
    pub frames: usize,
    pub overlap_fraction: f64,
}

impl Default for SegmenterParams {
    fn default() -> Self {
        Self {
            frames: 50,
            overlap_fraction: 0.5,
        }
    }
}

impl SegmenterParams {
    pub fn hop(&self) -> usize {
        ((self.frames as f64 * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }

    /// Segments obtained from a map with `n_frames` columns.
    pub fn count(&self, n_frames: usize) -> usize {
        if n_frames < self.frames {
            0
        } else {
            (n_frames - self.frames) / self.hop() + 1
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.frames < 1 || !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(crate::Error::InvalidParameter(format!(
                "segmenter needs frames >= 1 and overlap in [0, 1), got {} / {}",
                self.frames, self.overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Where normalization to zero mean / unit variance is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationScope {
    /// Each `K x B` segment on its own.
    #[default]
    PerSegment,
    /// The whole utterance map, before segmentation.
    PerUtterance,
    None,
}

/// Identifies the utterance a segment came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentOrigin {
    pub speaker_id: String,
    pub label: Label,
    pub utterance_id: String,
}

/// One `K x B` classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    pub values: Matrix<f64>,
    pub speaker_id: String,
    pub label: Label,
    pub utterance_id: String,
    pub index: u32,
}

/// Cuts `map` into `K x B` windows starting every `hop` frames, in column
/// order. Maps shorter than `B` frames yield nothing.
pub fn segment(map: &FeatureMap, params: &SegmenterParams, origin: &SegmentOrigin) -> Vec<FeatureSegment> {
    let n = params.count(map.n_frames());
    if n == 0 {
        log::warn!(
            "utterance {:?} has {} frames, fewer than the segment width {}; skipped",
            origin.utterance_id,
            map.n_frames(),
            params.frames
        );
    }
    let hop = params.hop();
    (0..n)
        .map(|i| FeatureSegment {
            values: map.values.columns(i * hop, params.frames),
            speaker_id: origin.speaker_id.clone(),
            label: origin.label,
            utterance_id: origin.utterance_id.clone(),
            index: i as u32,
        })
        .collect()
}

/// Zero mean, unit population standard deviation (std floored at 1e-8).
pub fn normalize(segment: &FeatureSegment) -> FeatureSegment {
    FeatureSegment {
        values: normalize_matrix(&segment.values),
        ..segment.clone()
    }
}

pub fn normalize_matrix(m: &Matrix<f64>) -> Matrix<f64> {
    let n = m.as_slice().len().max(1) as f64;
    let mean = m.iter().sum::<f64>() / n;
    let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    m.map(|v| (v - mean) / std)
}

/// Segments a map and applies the chosen normalization.
pub fn segment_normalized(
    map: &FeatureMap,
    params: &SegmenterParams,
    scope: NormalizationScope,
    origin: &SegmentOrigin,
) -> Vec<FeatureSegment> {
    match scope {
        NormalizationScope::PerSegment => segment(map, params, origin).iter().map(normalize).collect(),
        NormalizationScope::PerUtterance => {
            let normalized = FeatureMap {
                values: normalize_matrix(&map.values),
                ..map.clone()
            };
            segment(&normalized, params, origin)
        }
        NormalizationScope::None => segment(map, params, origin),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{FeatureKind, Provenance};
    use proptest::prelude::*;

    fn map_with_frames(l: usize) -> FeatureMap {
        FeatureMap {
            values: Matrix::from_fn(4, l, |r, c| (r * 1000 + c) as f64),
            kind: FeatureKind::If,
            provenance: Provenance {
                frame_len: 160,
                hop: 160,
                sample_rate: 16000,
            },
        }
    }

    fn origin() -> SegmentOrigin {
        SegmentOrigin {
            speaker_id: "s1".into(),
            label: Label::Dysarthric,
            utterance_id: "u1".into(),
        }
    }

    fn seg(values: Matrix<f64>) -> FeatureSegment {
        FeatureSegment {
            values,
            speaker_id: "s".into(),
            label: Label::Neurotypical,
            utterance_id: "u".into(),
            index: 0,
        }
    }

    #[test]
    fn hundred_frames_give_three_segments() {
        let segs = segment(&map_with_frames(100), &SegmenterParams::default(), &origin());
        assert_eq!(segs.len(), 3);
        let starts: Vec<f64> = segs.iter().map(|s| s.values[(0, 0)]).collect();
        assert_eq!(starts, vec![0.0, 25.0, 50.0]);
        assert_eq!(segs[2].index, 2);
        assert_eq!((segs[0].values.rows(), segs[0].values.cols()), (4, 50));
    }

    #[test]
    fn boundary_lengths() {
        let p = SegmenterParams::default();
        assert_eq!(segment(&map_with_frames(50), &p, &origin()).len(), 1);
        assert!(segment(&map_with_frames(49), &p, &origin()).is_empty());
    }

    #[test]
    fn constant_segment_normalizes_to_zero() {
        let out = normalize(&seg(Matrix::from_vec(2, 2, vec![3.0; 4])));
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_cell_segment() {
        let out = normalize(&seg(Matrix::from_vec(1, 2, vec![1.0, 3.0])));
        assert_eq!(out.values.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn random_segment_statistics() {
        let mut state = 5u64;
        let values = Matrix::from_fn(81, 50, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 + 3.0
        });
        let out = normalize(&seg(values));
        let n = out.values.as_slice().len() as f64;
        let mean = out.values.iter().sum::<f64>() / n;
        let std = (out.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn per_utterance_scope_normalizes_before_cutting() {
        let segs = segment_normalized(
            &map_with_frames(75),
            &SegmenterParams::default(),
            NormalizationScope::PerUtterance,
            &origin(),
        );
        assert_eq!(segs.len(), 2);
        let whole = normalize_matrix(&map_with_frames(75).values);
        assert_eq!(segs[1].values, whole.columns(25, 50));
    }

    proptest! {
        #[test]
        fn segments_are_column_windows(l in 0usize..200, frames in 1usize..40, overlap in 0.0f64..0.95) {
            let p = SegmenterParams { frames, overlap_fraction: overlap };
            let map = map_with_frames(l);
            let segs = segment(&map, &p, &origin());
            prop_assert_eq!(segs.len(), p.count(l));
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(&s.values, &map.values.columns(i * p.hop(), frames));
            }
        }

        #[test]
        fn normalization_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 2..200)) {
            let m = Matrix::from_vec(1, v.len(), v);
            let once = normalize_matrix(&m);
            let twice = normalize_matrix(&once);
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
