//! Minimal WAV I/O for the formats the pipeline accepts.
//!
//! Readable files are RIFF/WAVE with 2 channels at 44100 Hz, either 16-bit
//! PCM or 32-bit IEEE float. Anything else is rejected rather than converted,
//! so the numbers entering the front end are exactly the numbers on disk
//! (PCM is scaled by 1/32768).

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::signal::{PcmStream, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a RIFF/WAVE file")]
    BadMagic,
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
    #[error("unsupported audio format tag {0} (want 1 = PCM or 3 = IEEE float)")]
    UnsupportedFormat(u16),
    #[error("unsupported channel count {0} (want 2)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample rate {0} (want 44100)")]
    UnsupportedRate(u32),
    #[error("unsupported bit depth {bits} for format tag {format}")]
    UnsupportedBits { format: u16, bits: u16 },
    #[error("file truncated")]
    Truncated,
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8]) -> Result<(), WavError> {
    r.read_exact(buf).map_err(|_| WavError::Truncated)
}

fn read_u32(r: &mut impl Read) -> Result<u32, WavError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read a stereo 44.1 kHz WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmStream, WavError> {
    read_wav_from(&mut File::open(path)?)
}

/// Read a stereo 44.1 kHz WAV stream from any reader.
pub fn read_wav_from(r: &mut impl Read) -> Result<PcmStream, WavError> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic)?;
    if &magic != b"RIFF" {
        return Err(WavError::BadMagic);
    }
    let _riff_size = read_u32(r)?;
    read_exact_or(r, &mut magic)?;
    if &magic != b"WAVE" {
        return Err(WavError::BadMagic);
    }

    let mut format: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    loop {
        let mut id = [0u8; 4];
        if r.read_exact(&mut id).is_err() {
            return Err(WavError::MissingChunk("data"));
        }
        let size = read_u32(r)? as usize;
        match &id {
            b"fmt " => {
                let mut chunk = vec![0u8; size];
                read_exact_or(r, &mut chunk)?;
                if size < 16 {
                    return Err(WavError::Truncated);
                }
                let tag = u16::from_le_bytes([chunk[0], chunk[1]]);
                let channels = u16::from_le_bytes([chunk[2], chunk[3]]);
                let rate = u32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
                let bits = u16::from_le_bytes([chunk[14], chunk[15]]);
                format = Some((tag, channels, rate, bits));
                if size % 2 == 1 {
                    let mut pad = [0u8; 1];
                    let _ = r.read_exact(&mut pad);
                }
            }
            b"data" => {
                let (tag, channels, rate, bits) =
                    format.ok_or(WavError::MissingChunk("fmt "))?;
                if channels != 2 {
                    return Err(WavError::UnsupportedChannels(channels));
                }
                if rate != SAMPLE_RATE {
                    return Err(WavError::UnsupportedRate(rate));
                }
                let mut data = vec![0u8; size];
                read_exact_or(r, &mut data)?;
                let (left, right) = match (tag, bits) {
                    (1, 16) => decode_pcm16(&data),
                    (3, 32) => decode_f32(&data),
                    _ => {
                        if tag != 1 && tag != 3 {
                            return Err(WavError::UnsupportedFormat(tag));
                        }
                        return Err(WavError::UnsupportedBits { format: tag, bits });
                    }
                };
                return Ok(PcmStream::new(left, right, SAMPLE_RATE).expect("equal lengths"));
            }
            _ => {
                // Skip unknown chunks (LIST, fact, ...), honoring the pad byte.
                let skip = size + size % 2;
                let mut remaining = skip;
                let mut scratch = [0u8; 512];
                while remaining > 0 {
                    let take = remaining.min(scratch.len());
                    read_exact_or(r, &mut scratch[..take])?;
                    remaining -= take;
                }
            }
        }
    }
}

fn decode_pcm16(data: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let frames = data.len() / 4;
    let mut left = Vec::with_capacity(frames);
    let mut right = Vec::with_capacity(frames);
    for f in 0..frames {
        let l = i16::from_le_bytes([data[4 * f], data[4 * f + 1]]);
        let r = i16::from_le_bytes([data[4 * f + 2], data[4 * f + 3]]);
        left.push(l as f64 / 32768.0);
        right.push(r as f64 / 32768.0);
    }
    (left, right)
}

fn decode_f32(data: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let frames = data.len() / 8;
    let mut left = Vec::with_capacity(frames);
    let mut right = Vec::with_capacity(frames);
    for f in 0..frames {
        let l = f32::from_le_bytes([
            data[8 * f],
            data[8 * f + 1],
            data[8 * f + 2],
            data[8 * f + 3],
        ]);
        let r = f32::from_le_bytes([
            data[8 * f + 4],
            data[8 * f + 5],
            data[8 * f + 6],
            data[8 * f + 7],
        ]);
        left.push(l as f64);
        right.push(r as f64);
    }
    (left, right)
}

/// Write a stream as 32-bit IEEE float WAV.
pub fn write_wav_f32(stream: &PcmStream, path: impl AsRef<Path>) -> Result<(), WavError> {
    let mut f = File::create(path)?;
    write_wav_f32_to(stream, &mut f)
}

/// Write a stream as 16-bit PCM WAV (samples clamped to [−1, 1]).
pub fn write_wav_i16(stream: &PcmStream, path: impl AsRef<Path>) -> Result<(), WavError> {
    let mut f = File::create(path)?;
    write_wav_i16_to(stream, &mut f)
}

pub fn write_wav_f32_to(stream: &PcmStream, w: &mut impl Write) -> Result<(), WavError> {
    let n = stream.len() as u32;
    let data_size = n * 8;
    // fact chunk is required for non-PCM formats.
    let riff_size = 4 + (8 + 16) + (8 + 4) + (8 + data_size);
    w.write_all(b"RIFF")?;
    w.write_all(&riff_size.to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&3u16.to_le_bytes())?; // IEEE float
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&stream.sample_rate().to_le_bytes())?;
    w.write_all(&(stream.sample_rate() * 8).to_le_bytes())?;
    w.write_all(&8u16.to_le_bytes())?;
    w.write_all(&32u16.to_le_bytes())?;
    w.write_all(b"fact")?;
    w.write_all(&4u32.to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_size.to_le_bytes())?;
    for (l, r) in stream.left().iter().zip(stream.right().iter()) {
        w.write_all(&(*l as f32).to_le_bytes())?;
        w.write_all(&(*r as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_wav_i16_to(stream: &PcmStream, w: &mut impl Write) -> Result<(), WavError> {
    let n = stream.len() as u32;
    let data_size = n * 4;
    let riff_size = 4 + (8 + 16) + (8 + data_size);
    w.write_all(b"RIFF")?;
    w.write_all(&riff_size.to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&stream.sample_rate().to_le_bytes())?;
    w.write_all(&(stream.sample_rate() * 4).to_le_bytes())?;
    w.write_all(&4u16.to_le_bytes())?;
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_size.to_le_bytes())?;
    for (l, r) in stream.left().iter().zip(stream.right().iter()) {
        let li = (l.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        let ri = (r.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&li.to_le_bytes())?;
        w.write_all(&ri.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_stream(len: usize) -> PcmStream {
        let left: Vec<f64> = (0..len).map(|i| (i as f64 / len as f64) * 0.9 - 0.45).collect();
        let right: Vec<f64> = left.iter().map(|v| -v).collect();
        PcmStream::new(left, right, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn f32_round_trip_is_exact_to_f32() {
        let s = ramp_stream(500);
        let mut buf = Vec::new();
        write_wav_f32_to(&s, &mut buf).unwrap();
        let back = read_wav_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 500);
        for (a, b) in s.left().iter().zip(back.left().iter()) {
            assert!((a - b).abs() <= f32::EPSILON as f64 * a.abs().max(1.0));
        }
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let s = ramp_stream(500);
        let mut buf = Vec::new();
        write_wav_i16_to(&s, &mut buf).unwrap();
        let back = read_wav_from(&mut buf.as_slice()).unwrap();
        for (a, b) in s.right().iter().zip(back.right().iter()) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_wrong_sample_rate() {
        let s = PcmStream::new(vec![0.0; 4], vec![0.0; 4], 48_000).unwrap();
        let mut buf = Vec::new();
        write_wav_f32_to(&s, &mut buf).unwrap();
        assert!(matches!(
            read_wav_from(&mut buf.as_slice()),
            Err(WavError::UnsupportedRate(48_000))
        ));
    }

    #[test]
    fn rejects_mono() {
        // Hand-build a mono header.
        let mut buf = Vec::new();
        buf.extend_from_slice(b"RIFF");
        buf.extend_from_slice(&36u32.to_le_bytes());
        buf.extend_from_slice(b"WAVE");
        buf.extend_from_slice(b"fmt ");
        buf.extend_from_slice(&16u32.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&1u16.to_le_bytes()); // 1 channel
        buf.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
        buf.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
        buf.extend_from_slice(&2u16.to_le_bytes());
        buf.extend_from_slice(&16u16.to_le_bytes());
        buf.extend_from_slice(b"data");
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_wav_from(&mut buf.as_slice()),
            Err(WavError::UnsupportedChannels(1))
        ));
    }

    #[test]
    fn rejects_garbage() {
        let mut junk: &[u8] = b"not a wav file at all";
        assert!(matches!(read_wav_from(&mut junk), Err(WavError::BadMagic)));
    }

    #[test]
    fn truncated_data_chunk_errors() {
        let s = ramp_stream(100);
        let mut buf = Vec::new();
        write_wav_f32_to(&s, &mut buf).unwrap();
        buf.truncate(buf.len() - 13);
        assert!(matches!(
            read_wav_from(&mut buf.as_slice()),
            Err(WavError::Truncated)
        ));
    }
}
