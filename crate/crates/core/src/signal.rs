//! Front end: stereo PCM streams to windowed complex spectrum pairs.
//!
//! A stream is cut into overlapping 2048-sample frames at a hop of 705
//! samples (a frame rate of about 62.55 Hz at 44.1 kHz), each frame is
//! Hamming-windowed and transformed with an unnormalized forward FFT.
//! The inverse direction divides by N, so `ifft(fft(x)) == x`.

use std::cell::RefCell;
use std::io::{self, Write};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Frame length N in samples.
pub const FRAME_LEN: usize = 2048;
/// Default hop between frame starts, in samples. 44100/705 ≈ 62.55 Hz.
pub const DEFAULT_HOP: usize = 705;
/// The only sample rate the pipeline operates at.
pub const SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("left and right channels differ in length ({left} vs {right})")]
    ChannelMismatch { left: usize, right: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("stream has {len} samples, need at least {min}")]
    StreamTooShort { len: usize, min: usize },
    #[error("hop must be at least 1")]
    ZeroHop,
    #[error("frame has {len} samples, expected {expected}")]
    BadFrameLength { len: usize, expected: usize },
    #[error("fft length {len} is not a power of two")]
    NotPowerOfTwo { len: usize },
}

/// Two-channel PCM stream at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmStream {
    left: Vec<f64>,
    right: Vec<f64>,
    sample_rate: u32,
}

impl PcmStream {
    pub fn new(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if left.len() != right.len() {
            return Err(SignalError::ChannelMismatch {
                left: left.len(),
                right: right.len(),
            });
        }
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        Ok(Self {
            left,
            right,
            sample_rate,
        })
    }

    pub fn left(&self) -> &[f64] {
        &self.left
    }

    pub fn right(&self) -> &[f64] {
        &self.right
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// One channel's worth of a single analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    values: Vec<f64>,
    start_index: usize,
}

impl Frame {
    pub fn new(values: Vec<f64>, start_index: usize) -> Result<Self, SignalError> {
        if values.len() != FRAME_LEN {
            return Err(SignalError::BadFrameLength {
                len: values.len(),
                expected: FRAME_LEN,
            });
        }
        Ok(Self {
            values,
            start_index,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sample offset of this frame in the source stream.
    pub fn start_index(&self) -> usize {
        self.start_index
    }
}

/// Windowed spectrum pair for one frame of a stereo stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralFrame {
    pub spectrum_left: Vec<Complex64>,
    pub spectrum_right: Vec<Complex64>,
    pub frame_index: usize,
    sample_rate: u32,
}

impl BinauralFrame {
    pub fn new(
        spectrum_left: Vec<Complex64>,
        spectrum_right: Vec<Complex64>,
        frame_index: usize,
        sample_rate: u32,
    ) -> Self {
        Self {
            spectrum_left,
            spectrum_right,
            frame_index,
            sample_rate,
        }
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Center frequency of bin `bin` in Hz: bin · rate / N.
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.spectrum_left.len() as f64
    }
}

/// Cut a stream into aligned left/right frame pairs every `hop` samples.
///
/// Yields floor((len − N)/hop) + 1 pairs; errors if the stream is shorter
/// than one frame.
pub fn frame_stream(stream: &PcmStream, hop: usize) -> Result<Vec<(Frame, Frame)>, SignalError> {
    if hop == 0 {
        return Err(SignalError::ZeroHop);
    }
    let len = stream.len();
    if len < FRAME_LEN {
        return Err(SignalError::StreamTooShort {
            len,
            min: FRAME_LEN,
        });
    }
    let count = (len - FRAME_LEN) / hop + 1;
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        let l = Frame::new(stream.left[start..start + FRAME_LEN].to_vec(), start)?;
        let r = Frame::new(stream.right[start..start + FRAME_LEN].to_vec(), start)?;
        pairs.push((l, r));
    }
    Ok(pairs)
}

fn hamming_table() -> &'static [f64; FRAME_LEN] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[f64; FRAME_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut w = [0.0; FRAME_LEN];
        for (t, v) in w.iter_mut().enumerate() {
            *v = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * t as f64 / (FRAME_LEN as f64 - 1.0)).cos();
        }
        w
    })
}

/// The analysis window coefficients, w[t] = 0.54 − 0.46·cos(2πt/(N−1)).
pub fn hamming_coefficients() -> &'static [f64] {
    hamming_table()
}

/// Apply the Hamming window to a frame.
pub fn hamming_window(frame: &Frame) -> Frame {
    let w = hamming_table();
    let values = frame
        .values
        .iter()
        .zip(w.iter())
        .map(|(x, wt)| x * wt)
        .collect();
    Frame {
        values,
        start_index: frame.start_index,
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward FFT of a real frame, unnormalized convention.
///
/// The input length must be a power of two. The full complex spectrum is
/// returned; for real input, bin k and bin N−k are conjugates.
pub fn fft_spectrum(values: &[f64]) -> Result<Vec<Complex64>, SignalError> {
    let n = values.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(SignalError::NotPowerOfTwo { len: n });
    }
    let mut buf: Vec<Complex64> = values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(n);
        fft.process(&mut buf);
    });
    Ok(buf)
}

/// Inverse FFT scaled by 1/N, keeping the real part.
pub fn ifft_real(spectrum: &[Complex64]) -> Result<Vec<f64>, SignalError> {
    let n = spectrum.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(SignalError::NotPowerOfTwo { len: n });
    }
    let mut buf = spectrum.to_vec();
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_inverse(n);
        fft.process(&mut buf);
    });
    Ok(buf.iter().map(|c| c.re / n as f64).collect())
}

/// Full front end: frame, window and transform both channels.
///
/// Uses the default hop. Deterministic: the same stream yields bit-identical
/// spectra.
pub fn binaural_spectra(stream: &PcmStream) -> Result<Vec<BinauralFrame>, SignalError> {
    binaural_spectra_with_hop(stream, DEFAULT_HOP)
}

/// Same as [`binaural_spectra`] with an explicit hop.
pub fn binaural_spectra_with_hop(
    stream: &PcmStream,
    hop: usize,
) -> Result<Vec<BinauralFrame>, SignalError> {
    let pairs = frame_stream(stream, hop)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, (l, r)) in pairs.iter().enumerate() {
        let sl = fft_spectrum(hamming_window(l).values())?;
        let sr = fft_spectrum(hamming_window(r).values())?;
        out.push(BinauralFrame::new(sl, sr, i, stream.sample_rate));
    }
    Ok(out)
}

/// Dump spectra as CSV rows `frame_index,bin,re_l,im_l,re_r,im_r`.
pub fn export_spectra_csv<W: Write>(frames: &[BinauralFrame], mut out: W) -> io::Result<()> {
    writeln!(out, "frame_index,bin,re_l,im_l,re_r,im_r")?;
    for f in frames {
        for (bin, (l, r)) in f
            .spectrum_left
            .iter()
            .zip(f.spectrum_right.iter())
            .enumerate()
        {
            writeln!(

                out,
                "{},{},{},{},{},{}",
                f.frame_index, bin, l.re, l.im, r.re, r.im
            )?;
        }
    }
    Ok(())
}
