//! Interaural features: per-frequency level difference (ILD) and phase
//! difference (IPD) computed from a normalized spectrum pair.
//!
//! For bin ω the pair (X_l, X_r) is scaled by 1/√(|X_l|²+|X_r|²); ILD is the
//! natural-log magnitude difference and IPD keeps each channel's phase as a
//! point on the unit circle, giving the 5-value network input
//! (ild, Re l̂, Im l̂, Re r̂, Im r̂).

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::signal::BinauralFrame;

/// Energy below which a bin is treated as silent and excluded.
pub const SILENT_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("bin {bin} is silent (energy {energy:.3e} ≤ {SILENT_EPS:.0e})")]
    SilentBin { bin: usize, energy: f64 },
    #[error("bin {bin} has a silent {side} channel")]
    SilentChannel { bin: usize, side: &'static str },
    #[error("bin {bin} outside usable range [1, {max})")]
    BinOutOfRange { bin: usize, max: usize },
}

/// Spectrum pair at one bin, scaled to unit joint energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPair {
    pub xhat_left: Complex64,
    pub xhat_right: Complex64,
    pub bin: usize,
}

/// The 5-value feature for one bin: level difference plus unit-circle phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IldIpdFeature {
    pub ild: f64,
    pub ipd: [f64; 4],
    pub bin: usize,
}

impl IldIpdFeature {
    /// Feature in network input order: (ild, Re l̂, Im l̂, Re r̂, Im r̂).
    pub fn as_array(&self) -> [f64; 5] {
        [self.ild, self.ipd[0], self.ipd[1], self.ipd[2], self.ipd[3]]
    }
}

/// Scale a spectrum pair to unit joint energy.
pub fn normalize_pair(
    xl: Complex64,
    xr: Complex64,
    bin: usize,
) -> Result<NormalizedPair, FeatureError> {
    let energy = xl.norm_sqr() + xr.norm_sqr();
    if !(energy > SILENT_EPS) {
        return Err(FeatureError::SilentBin { bin, energy });
    }
    let scale = energy.sqrt();
    Ok(NormalizedPair {
        xhat_left: xl / scale,
        xhat_right: xr / scale,
        bin,
    })
}

/// Interaural level difference, ln|x̂_l| − ln|x̂_r|.
pub fn ild(pair: &NormalizedPair) -> Result<f64, FeatureError> {
    let (ml, mr) = (pair.xhat_left.norm(), pair.xhat_right.norm());
    if !(ml > SILENT_EPS) {
        return Err(FeatureError::SilentChannel {
            bin: pair.bin,
            side: "left",
        });
    }
    if !(mr > SILENT_EPS) {
        return Err(FeatureError::SilentChannel {
            bin: pair.bin,
            side: "right",
        });
    }
    Ok(ml.ln() - mr.ln())
}

/// Interaural phase components (Re l̂, Im l̂, Re r̂, Im r̂), each channel's
/// phase projected onto the unit circle.
pub fn ipd(pair: &NormalizedPair) -> Result<[f64; 4], FeatureError> {
    let (ml, mr) = (pair.xhat_left.norm(), pair.xhat_right.norm());
    if !(ml > SILENT_EPS) {
        return Err(FeatureError::SilentChannel {
            bin: pair.bin,
            side: "left",
        });
    }
    if !(mr > SILENT_EPS) {
        return Err(FeatureError::SilentChannel {
            bin: pair.bin,
            side: "right",
        });
    }
    let l = pair.xhat_left / ml;
    let r = pair.xhat_right / mr;
    Ok([l.re, l.im, r.re, r.im])
}

/// Full 5-value feature for one bin of a binaural frame.
///
/// Only bins 1..N/2 are usable; DC and Nyquist have degenerate phase.
pub fn feature_vector(frame: &BinauralFrame, bin: usize) -> Result<IldIpdFeature, FeatureError> {
    let half = frame.spectrum_left.len() / 2;
    if bin < 1 || bin >= half {
        return Err(FeatureError::BinOutOfRange { bin, max: half });
    }
    let pair = normalize_pair(frame.spectrum_left[bin], frame.spectrum_right[bin], bin)?;
    Ok(IldIpdFeature {
        ild: ild(&pair)?,
        ipd: ipd(&pair)?,
        bin,
    })
}
