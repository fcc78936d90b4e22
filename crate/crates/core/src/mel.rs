//! Mel filterbank and normalized log-mel spectrograms.
//!
//! 128 unit-peak triangular filters sit on equally spaced mel centers
//! between 0 Hz and the Nyquist frequency. A spectrogram is 25 consecutive
//! filtered power spectra of one channel, compressed with log(1 + x) and
//! divided by the matrix maximum so intensity is relative.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::signal::BinauralFrame;

/// Mel bands per spectrogram.
pub const MEL_BANDS: usize = 128;
/// Frames per spectrogram, about 0.4 s at the default hop.
pub const MEL_FRAMES: usize = 25;
/// Below this pre-normalization maximum a spectrogram counts as silence.
pub const SILENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MelError {
    #[error("a mel spectrogram needs exactly {expected} frames, got {got}")]
    WrongFrameCount { got: usize, expected: usize },
    #[error("frame spectra have {got} bins, filterbank expects {expected}")]
    BinMismatch { got: usize, expected: usize },
}

/// Which channel of a binaural frame a spectrogram was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Left,
    Right,
}

/// 2595 · log10(1 + f/700).
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Bank of unit-peak triangular filters on the mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Triangle corner frequencies in Hz: band i spans
    /// (edges[i], edges[i+1], edges[i+2]).
    edges: Vec<f64>,
    /// Dense weights, `bands × bins`, sampled at bin center frequencies.
    weights: Vec<f64>,
    bands: usize,
    bins: usize,
    hz_per_bin: f64,
}

impl MelFilterbank {
    /// Filters with `bands` triangles between `f_lo` and `f_hi` Hz, sampled
    /// for spectra of `bins` one-sided points spaced `hz_per_bin` apart.
    pub fn new(bands: usize, f_lo: f64, f_hi: f64, bins: usize, hz_per_bin: f64) -> Self {
        assert!(bands >= 2, "need at least 2 mel bands");
        assert!(f_hi > f_lo && f_lo >= 0.0);
        let m_lo = hz_to_mel(f_lo);
        let m_hi = hz_to_mel(f_hi);
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let mut weights = vec![0.0; bands * bins];
        for band in 0..bands {
            for bin in 0..bins {
                weights[band * bins + bin] =
                    triangle(edges[band], edges[band + 1], edges[band + 2], bin as f64 * hz_per_bin);
            }
        }
        Self {
            edges,
            weights,
            bands,
            bins,
            hz_per_bin,
        }
    }

    /// The standard bank: 128 bands over the full band of a 44.1 kHz,
    /// 2048-point analysis (0 to 22050 Hz, 1025 one-sided bins).
    pub fn standard() -> Self {
        let n = crate::signal::FRAME_LEN;
        let rate = crate::signal::SAMPLE_RATE as f64;
        Self::new(MEL_BANDS, 0.0, rate / 2.0, n / 2 + 1, rate / n as f64)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Peak (center) frequency of one band in Hz.
    pub fn center_hz(&self, band: usize) -> f64 {
        self.edges[band + 1]
    }

    /// Continuous triangle response of `band` at `hz`.
    pub fn response(&self, band: usize, hz: f64) -> f64 {
        triangle(
            self.edges[band],
            self.edges[band + 1],
            self.edges[band + 2],
            hz,
        )
    }

    /// Sampled weight of `band` at one-sided `bin`.
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band * self.bins + bin]
    }

    /// Filtered power per band: `Σ_k weight(band, k) · |X_k|²` over the
    /// one-sided spectrum.
    pub fn apply(&self, spectrum: &[Complex64]) -> Result<Vec<f64>, MelError> {
        if spectrum.len() < self.bins {
            return Err(MelError::BinMismatch {
                got: spectrum.len(),
                expected: self.bins,
            });
        }
        Ok((0..self.bands)
            .map(|band| {
                let row = &self.weights[band * self.bins..(band + 1) * self.bins];
                row.iter()
                    .zip(spectrum)
                    .map(|(w, x)| w * x.norm_sqr())
                    .sum()
            })
            .collect())
    }

    pub fn hz_per_bin(&self) -> f64 {
        self.hz_per_bin
    }
}

fn triangle(left: f64, center: f64, right: f64, hz: f64) -> f64 {
    if hz <= left || hz >= right {
        0.0
    } else if hz <= center {
        (hz - left) / (center - left)
    } else {
        (right - hz) / (right - center)
    }
}

/// Normalized log-mel image of 25 consecutive frames of one channel.
///
/// Stored band-major: `values[band * 25 + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub channel: Channel,
}

impl MelSpectrogram {
    pub fn value(&self, band: usize, frame: usize) -> f64 {
        self.values[band * MEL_FRAMES + frame]
    }
}

/// log(1 + mel power) per band and frame, divided by the matrix maximum.
///
/// A maximum below [`SILENCE_FLOOR`] marks silence and yields all zeros.
pub fn mel_spectrogram(
    frames: &[BinauralFrame],
    channel: Channel,
    bank: &MelFilterbank,
) -> Result<MelSpectrogram, MelError> {
    if frames.len() != MEL_FRAMES {
        return Err(MelError::WrongFrameCount {
            got: frames.len(),
            expected: MEL_FRAMES,
        });
    }
    let mut values = vec![0.0; bank.bands() * MEL_FRAMES];
    for (t, frame) in frames.iter().enumerate() {
        let spectrum = match channel {
            Channel::Left => &frame.spectrum_left,
            Channel::Right => &frame.spectrum_right,
        };
        for (band, power) in bank.apply(spectrum)?.into_iter().enumerate() {
            values[band * MEL_FRAMES + t] = (1.0 + power).ln();
        }
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max < SILENCE_FLOOR {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(MelSpectrogram { values, channel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{binaural_spectra, PcmStream, FRAME_LEN, SAMPLE_RATE};
    use proptest::prelude::*;

    #[test]
    fn mel_of_700_and_zero() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((hz_to_mel(700.0) - 781.2).abs() < 0.1);
        assert_eq!(hz_to_mel(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn mel_roundtrip(hz in 0.0f64..22050.0) {
            let back = mel_to_hz(hz_to_mel(hz));
            prop_assert!((back - hz).abs() < 1e-6 * hz.max(1.0));
        }
    }

    #[test]
    fn unit_peak_and_zero_at_neighbors() {
        let bank = MelFilterbank::standard();
        for band in [0, 1, 37, 64, 126, 127] {
            assert!((bank.response(band, bank.center_hz(band)) - 1.0).abs() < 1e-12);
            if band > 0 {
                assert_eq!(bank.response(band, bank.center_hz(band - 1)), 0.0);
            }
            if band + 1 < bank.bands() {
                assert_eq!(bank.response(band, bank.center_hz(band + 1)), 0.0);
            }
        }
    }

    #[test]
    fn rows_nonnegative_with_positive_sums_and_increasing_peaks() {
        let bank = MelFilterbank::standard();
        let mut prev_center = -1.0;
        for band in 0..bank.bands() {
            let mut sum = 0.0;
            for bin in 0..bank.bins() {
                let w = bank.weight(band, bin);
                assert!(w >= 0.0);
                sum += w;
            }
            assert!(sum > 0.0, "band {band} never touches a bin center");
            assert!(bank.center_hz(band) > prev_center);
            prev_center = bank.center_hz(band);
        }
    }

    fn tone_stream(hz: f64, amp: f64, samples: usize) -> PcmStream {
        let wave: Vec<f64> = (0..samples)
            .map(|t| amp * (std::f64::consts::TAU * hz * t as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        PcmStream::new(wave.clone(), wave, SAMPLE_RATE).unwrap()
    }

    fn first_25(stream: &PcmStream) -> Vec<BinauralFrame> {
        binaural_spectra(stream)
            .unwrap()
            .into_iter()
            .take(MEL_FRAMES)
            .collect()
    }

    #[test]
    fn silence_maps_to_all_zeros() {
        let silent = PcmStream::new(
            vec![0.0; FRAME_LEN * 10],
            vec![0.0; FRAME_LEN * 10],
            SAMPLE_RATE,
        )
        .unwrap();
        let frames = first_25(&silent);
        let bank = MelFilterbank::standard();
        let m = mel_spectrogram(&frames, Channel::Left, &bank).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_keeps_max_at_one_under_scaling() {
        let bank = MelFilterbank::standard();
        for amp in [0.1, 0.2] {
            let frames = first_25(&tone_stream(1000.0, amp, FRAME_LEN * 12));
            let m = mel_spectrogram(&frames, Channel::Left, &bank).unwrap();
            let max = m.values.iter().cloned().fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
            assert_eq!(m.values.len(), MEL_BANDS * MEL_FRAMES);
        }
    }

    #[test]
    fn pure_tone_dominates_one_band_in_every_column() {
        let bank = MelFilterbank::standard();
        let frames = first_25(&tone_stream(1000.0, 0.5, FRAME_LEN * 12));
        let m = mel_spectrogram(&frames, Channel::Left, &bank).unwrap();
        let expected_mel = hz_to_mel(1000.0);
        for t in 0..MEL_FRAMES {
            let band = (0..MEL_BANDS)
                .max_by(|&a, &b| m.value(a, t).partial_cmp(&m.value(b, t)).unwrap())
                .unwrap();
            let center_mel = hz_to_mel(bank.center_hz(band));
            assert!(
                (center_mel - expected_mel).abs() < 2.0 * hz_to_mel(22050.0) / 129.0,
                "frame {t} peaks at band {band} ({center_mel:.0} mel), tone at {expected_mel:.0} mel"
            );
        }
    }

    #[test]
    fn wrong_frame_count_is_rejected() {
        let bank = MelFilterbank::standard();
        let frames = first_25(&tone_stream(500.0, 0.3, FRAME_LEN * 12));
        match mel_spectrogram(&frames[..10], Channel::Right, &bank) {
            Err(MelError::WrongFrameCount { got: 10, expected: 25 }) => {}
            other => panic!("expected WrongFrameCount, got {other:?}"),
        }
    }
}
