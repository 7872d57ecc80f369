use super::{Provenance, StftParams};
use crate::corpus::AudioClip;
use crate::{Error, Matrix, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// One-sided complex STFT coefficients, `K x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub coeffs: Matrix<Complex64>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            frame_len: self.params.frame_len,
            hop: self.params.hop,
            sample_rate: self.sample_rate,
        }
    }
}

/// Frame `l` covers samples `[l * hop, l * hop + N)`; the trailing remainder
/// shorter than a frame is dropped.
pub fn stft(clip: &AudioClip, params: &StftParams) -> Result<ComplexSpectrogram> {
    let coeffs = framewise(clip, params, |_, frame| frame)?
        .into_iter()
        .next()
        .expect("one output");
    Ok(ComplexSpectrogram {
        coeffs,
        params: *params,
        sample_rate: clip.sample_rate,
    })
}

/// Runs one-sided DFTs over windowed frames. `weight` may produce any number
/// of derived frames from each windowed frame (e.g. the ramp-weighted one);
/// each gets its own `K x L` output matrix.
pub(crate) fn framewise<F>(clip: &AudioClip, params: &StftParams, weight: F) -> Result<Vec<Matrix<Complex64>>>
where
    F: Fn(usize, Vec<Complex64>) -> Vec<Complex64>,
{
    framewise_multi(clip, params, 1, |l, frame| vec![weight(l, frame)])
}

pub(crate) fn framewise_multi<F>(
    clip: &AudioClip,
    params: &StftParams,
    outputs: usize,
    derive: F,
) -> Result<Vec<Matrix<Complex64>>>
where
    F: Fn(usize, Vec<Complex64>) -> Vec<Vec<Complex64>>,
{
    params.validate()?;
    let n = params.frame_len;
    if clip.len() < n {
        return Err(Error::TooShort {
            needed: n,
            got: clip.len(),
        });
    }
    let k = params.n_bins();
    let l_count = params.n_frames(clip.len());
    let window = params.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    let mut mats: Vec<Matrix<Complex64>> = (0..outputs).map(|_| Matrix::zeros(k, l_count)).collect();
    for l in 0..l_count {
        let start = l * params.hop;
        let frame: Vec<Complex64> = clip.samples[start..start + n]
            .iter()
            .zip(&window)
            .map(|(&s, &w)| Complex64::new(s * w, 0.0))
            .collect();
        for (mat, mut buf) in mats.iter_mut().zip(derive(l, frame)) {
            fft.process_with_scratch(&mut buf, &mut scratch);
            mat.set_column(l, &buf[..k]);
        }
    }
    Ok(mats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;
    use std::f64::consts::PI;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000).unwrap()
    }

    #[test]
    fn shape_for_two_frames() {
        let c = clip(vec![0.1; 320]);
        let s = stft(&c, &StftParams::default()).unwrap();
        assert_eq!((s.n_bins(), s.n_frames()), (81, 2));
    }

    #[test]
    fn trailing_remainder_discarded() {
        let c = clip(vec![0.1; 479]);
        let s = stft(&c, &StftParams::default()).unwrap();
        assert_eq!(s.n_frames(), 2);
        let p = StftParams::figure();
        assert_eq!(stft(&c, &p).unwrap().n_frames(), 1);
    }

    #[test]
    fn zero_clip_gives_zero_coefficients() {
        let s = stft(&clip(vec![0.0; 480]), &StftParams::default()).unwrap();
        assert!(s.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_clip_is_an_error() {
        let err = stft(&clip(vec![0.0; 159]), &StftParams::default()).unwrap_err();
        assert!(matches!(err, Error::TooShort { needed: 160, got: 159 }));
    }

    #[test]
    fn invalid_hop_rejected() {
        let p = StftParams {
            hop: 0,
            ..StftParams::default()
        };
        assert!(stft(&clip(vec![0.0; 480]), &p).is_err());
        let p = StftParams {
            hop: 161,
            ..StftParams::default()
        };
        assert!(stft(&clip(vec![0.0; 480]), &p).is_err());
    }

    #[test]
    fn bin_aligned_sine_peaks_at_bin_ten() {
        let x = (0..1600)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin())
            .collect();
        let p = StftParams {
            window: Window::Rectangular,
            ..StftParams::default()
        };
        let s = stft(&clip(x), &p).unwrap();
        for l in 0..s.n_frames() {
            let col = s.coeffs.column(l);
            let peak = (0..col.len())
                .max_by(|&a, &b| col[a].norm().total_cmp(&col[b].norm()))
                .unwrap();
            assert_eq!(peak, 10, "frame {l}");
        }
    }
}
