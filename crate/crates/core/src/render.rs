//! Figure panels of one utterance: log-magnitude, phase, modified group
//! delay and instantaneous frequency, written as CSV matrices and PNG images.

use crate::corpus::{resample_to_analysis_rate, AudioClip};
use crate::matrix::Matrix;
use crate::spectral::{
    instantaneous_frequency, log_magnitude, modified_group_delay, phase_spectrum, stft, FeatureMap, MgdParams,
    StftParams,
};
use crate::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

/// One rendered panel and where it was written.
#[derive(Debug, Clone)]
pub struct Panel {
    pub map: FeatureMap,
    pub csv: PathBuf,
    pub png: PathBuf,
}

/// Computes the four panels (in the order magnitude, phase, MGD, IF).
pub fn figure_maps(clip: &AudioClip, stft_params: &StftParams, mgd: &MgdParams) -> Result<Vec<FeatureMap>> {
    let clip = resample_to_analysis_rate(clip)?;
    let spec = stft(&clip, stft_params)?;
    Ok(vec![
        log_magnitude(&spec),
        phase_spectrum(&spec),
        modified_group_delay(&clip, stft_params, mgd)?,
        instantaneous_frequency(&spec)?,
    ])
}

/// Writes `<kind>.csv` and `<kind>.png` for each panel into `out_dir`.
pub fn render_figure(
    clip: &AudioClip,
    stft_params: &StftParams,
    mgd: &MgdParams,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<Panel>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    figure_maps(clip, stft_params, mgd)?
        .into_iter()
        .map(|map| {
            let csv = dir.join(format!("{}.csv", map.kind.name()));
            let png = dir.join(format!("{}.png", map.kind.name()));
            write_csv_matrix(&map.values, &csv)?;
            write_png(&map, &png)?;
            Ok(Panel { map, csv, png })
        })
        .collect()
}

/// One row per frequency bin, comma-separated, full precision.
pub fn write_csv_matrix(m: &Matrix<f64>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in 0..m.rows() {
        let line = m.row(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Grayscale image, one pixel per cell, low frequencies at the bottom.
/// Bounded kinds use their fixed range, the rest their own min and max.
pub fn write_png(map: &FeatureMap, path: &Path) -> Result<()> {
    let (lo, hi) = match map.kind.bounds() {
        Some((lo, hi)) if hi.is_finite() => (lo, hi),
        _ => map.min_max(),
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = (map.n_bins() as u32, map.n_frames() as u32);
    let img = image::GrayImage::from_fn(w.max(1), h.max(1), |x, y| {
        if h == 0 || w == 0 {
            return image::Luma([0]);
        }
        let v = map.values.row((h - 1 - y) as usize)[x as usize];
        image::Luma([(((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FeatureKind;
    use std::f64::consts::PI;

    #[test]
    fn four_panels() {
        let x: Vec<f64> = (0..16000)
            .map(|n| (2.0 * PI * 440.0 * n as f64 / 16000.0).sin() * 0.3)
            .collect();
        let clip = AudioClip::new(x, 16000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let panels = render_figure(&clip, &StftParams::figure(), &MgdParams::default(), dir.path()).unwrap();
        let kinds: Vec<_> = panels.iter().map(|p| p.map.kind).collect();
        assert_eq!(
            kinds,
            [
                FeatureKind::LogMagnitude,
                FeatureKind::Phase,
                FeatureKind::Mgd,
                FeatureKind::If
            ]
        );
        for p in &panels {
            assert_eq!((p.map.n_bins(), p.map.n_frames()), (161, 99));
            assert!(p.csv.exists() && p.png.exists());
            let text = std::fs::read_to_string(&p.csv).unwrap();
            assert_eq!(text.lines().count(), 161);
            assert_eq!(text.lines().next().unwrap().split(',').count(), 99);
            let img = image::open(&p.png).unwrap();
            assert_eq!((img.width(), img.height()), (99, 161));
        }
        for p in &panels[1..] {
            if p.map.kind != FeatureKind::Mgd {
                let (lo, hi) = p.map.min_max();
                assert!(lo >= -PI && hi <= PI);
            }
        }
    }
}
