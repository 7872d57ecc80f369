use super::{ComplexSpectrogram, FeatureKind, FeatureMap, MAGNITUDE_FLOOR};
use crate::{Error, Matrix, Result};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Principal value of the complex argument in `(-pi, pi]`, with `arg(0) = 0`.
pub fn principal_arg(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    if a == -PI {
        PI
    } else {
        a
    }
}

/// `ln(max(|S|, 1e-10))`.
pub fn log_magnitude(spec: &ComplexSpectrogram) -> FeatureMap {
    log_magnitude_floored(spec, MAGNITUDE_FLOOR)
}

pub fn log_magnitude_floored(spec: &ComplexSpectrogram, floor: f64) -> FeatureMap {
    FeatureMap {
        values: spec.coeffs.map(|c| c.norm().max(floor).ln()),
        kind: FeatureKind::LogMagnitude,
        provenance: spec.provenance(),
    }
}

/// Wrapped phase of every coefficient.
pub fn phase_spectrum(spec: &ComplexSpectrogram) -> FeatureMap {
    FeatureMap {
        values: spec.coeffs.map(|&c| principal_arg(c)),
        kind: FeatureKind::Phase,
        provenance: spec.provenance(),
    }
}

/// Phase advance between consecutive frames, `arg(S[k, l+1] * conj(S[k, l]))`.
///
/// The last column repeats column `L - 2` so the map keeps `L` frames.
pub fn instantaneous_frequency(spec: &ComplexSpectrogram) -> Result<FeatureMap> {
    let (k, l) = (spec.n_bins(), spec.n_frames());
    if l < 2 {
        return Err(Error::InvalidParameter(format!(
            "instantaneous frequency needs at least 2 frames, got {l}"
        )));
    }
    let s = &spec.coeffs;
    let mut values = Matrix::zeros(k, l);
    for bin in 0..k {
        for frame in 0..l - 1 {
            values[(bin, frame)] = principal_arg(s[(bin, frame + 1)] * s[(bin, frame)].conj());
        }
        values[(bin, l - 1)] = values[(bin, l - 2)];
    }
    Ok(FeatureMap {
        values,
        kind: FeatureKind::If,
        provenance: spec.provenance(),
    })
}
