//! Synthetic labeled sound corpus for detector training.
//!
//! Six families of short mono clips stand in for recorded environmental
//! sounds: a multi-harmonic horn, a beeping alarm, a click-train ratchet,
//! a low-passed noise thump, a short broadband transient and a
//! formant-like voiced buzz. Every clip is 0.6 s at 44.1 kHz with
//! parameters drawn from per-family ranges, deterministically per seed.

use std::f64::consts::TAU;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::nn::SeededRng;
use crate::signal::{PcmStream, SAMPLE_RATE};
use crate::wav::{read_wav, write_wav_f32, WavError};

/// The six clip families, in label-id order.
pub const LABELS: [&str; 6] = ["horn", "alarm", "ratchet", "thump", "transient", "buzz"];
/// Clips generated per label.
pub const CLIPS_PER_LABEL: usize = 50;
/// Samples per clip: 0.6 s.
pub const CLIP_SAMPLES: usize = 26_460;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("manifest line {line} is malformed: {text:?}")]
    BadManifest { line: usize, text: String },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An in-memory labeled corpus of mono clips.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub labels: Vec<String>,
    /// (label id, mono samples), grouped by label in generation order.
    pub clips: Vec<(usize, Vec<f64>)>,
}

impl Corpus {
    /// All clips of one label.
    pub fn of_label(&self, label: usize) -> impl Iterator<Item = &[f64]> {
        self.clips
            .iter()
            .filter(move |(l, _)| *l == label)
            .map(|(_, c)| c.as_slice())
    }
}

/// Attack/release envelope: linear ramps at both ends, unity in between.
fn envelope(t: usize, len: usize, attack: usize, release: usize) -> f64 {
    let head = (t as f64 / attack.max(1) as f64).min(1.0);
    let tail = ((len - 1 - t) as f64 / release.max(1) as f64).min(1.0);
    head * tail
}

fn synth_horn(rng: &mut SeededRng) -> Vec<f64> {
    let f0 = rng.gen_range(250.0..450.0);
    let partials = rng.gen_range(4..=6);
    let amp = rng.gen_range(0.25..0.5);
    (0..CLIP_SAMPLES)
        .map(|t| {
            let sec = t as f64 / SAMPLE_RATE as f64;
            let mut v = 0.0;
            for k in 1..=partials {
                v += (TAU * f0 * k as f64 * sec).sin() / k as f64;
            }
            amp * envelope(t, CLIP_SAMPLES, 900, 2200) * v / 1.8
        })
        .collect()
}

fn synth_alarm(rng: &mut SeededRng) -> Vec<f64> {
    let carrier = rng.gen_range(1800.0..3200.0);
    let beep_hz = rng.gen_range(4.0..8.0);
    let amp = rng.gen_range(0.3..0.55);
    (0..CLIP_SAMPLES)
        .map(|t| {
            let sec = t as f64 / SAMPLE_RATE as f64;
            let phase = (sec * beep_hz).fract();
            let gate = if phase < 0.5 { 1.0 } else { 0.0 };
            let edge = (phase.min(0.5 - phase).max(0.0) * SAMPLE_RATE as f64 / 220.0).min(1.0);
            amp * gate * edge * (TAU * carrier * sec).sin()
        })
        .collect()
}

fn synth_ratchet(rng: &mut SeededRng) -> Vec<f64> {
    let rate = rng.gen_range(18.0..35.0);
    let click_len = rng.gen_range(90..180);
    let amp = rng.gen_range(0.35..0.6);
    let period = (SAMPLE_RATE as f64 / rate) as usize;
    let mut out = vec![0.0; CLIP_SAMPLES];
    let mut start = rng.gen_range(0..period / 2);
    while start < CLIP_SAMPLES {
        for i in 0..click_len.min(CLIP_SAMPLES - start) {
            let decay = (-(i as f64) / (click_len as f64 / 4.0)).exp();
            out[start + i] += amp * decay * (rng.gen::<f64>() * 2.0 - 1.0);
        }
        start += period;
    }
    out
}

fn synth_thump(rng: &mut SeededRng) -> Vec<f64> {
    let cutoff = rng.gen_range(150.0..400.0);
    let decay_sec = rng.gen_range(0.15..0.3);
    let amp = rng.gen_range(0.4..0.7);
    let onset = rng.gen_range(0..CLIP_SAMPLES / 4);
    let alpha = 1.0 - (-TAU * cutoff / SAMPLE_RATE as f64).exp();
    let mut state = 0.0;
    (0..CLIP_SAMPLES)
        .map(|t| {
            let noise = rng.gen::<f64>() * 2.0 - 1.0;
            state += alpha * (noise - state);
            if t < onset {
                0.0
            } else {
                let age = (t - onset) as f64 / SAMPLE_RATE as f64;
                amp * (-age / decay_sec).exp() * state * 3.0
            }
        })
        .collect()
}

fn synth_transient(rng: &mut SeededRng) -> Vec<f64> {
    let burst = rng.gen_range(880..2650);
    let amp = rng.gen_range(0.4..0.7);
    let onset = rng.gen_range(0..CLIP_SAMPLES - burst - 1);
    let mut out = vec![0.0; CLIP_SAMPLES];
    for i in 0..burst {
        let decay = (-(i as f64) / (burst as f64 / 3.0)).exp();
        out[onset + i] = amp * decay * (rng.gen::<f64>() * 2.0 - 1.0);
    }
    out
}

fn synth_buzz(rng: &mut SeededRng) -> Vec<f64> {
    let f0 = rng.gen_range(90.0..160.0);
    let formants = [
        (rng.gen_range(500.0..900.0), 80.0),
        (rng.gen_range(1200.0..2000.0), 120.0),
    ];
    let amp = rng.gen_range(0.3..0.5);
    let period = (SAMPLE_RATE as f64 / f0) as usize;
    let mut excitation = vec![0.0; CLIP_SAMPLES];
    let mut t = 0;
    while t < CLIP_SAMPLES {
        excitation[t] = 1.0;
        t += period;
    }
    let mut out = excitation;
    for &(fc, bw) in &formants {
        out = resonate(&out, fc, bw);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter()
        .enumerate()
        .map(|(t, v)| amp * envelope(t, CLIP_SAMPLES, 900, 2200) * v / peak)
        .collect()
}

/// Two-pole resonator at `fc` Hz with bandwidth `bw` Hz.
fn resonate(x: &[f64], fc: f64, bw: f64) -> Vec<f64> {
    let r = (-std::f64::consts::PI * bw / SAMPLE_RATE as f64).exp();
    let theta = TAU * fc / SAMPLE_RATE as f64;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = gain * v - a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// One clip of the family `label`, drawn from `rng`.
pub fn synth_clip(label: usize, rng: &mut SeededRng) -> Vec<f64> {
    match LABELS[label] {
        "horn" => synth_horn(rng),
        "alarm" => synth_alarm(rng),
        "ratchet" => synth_ratchet(rng),
        "thump" => synth_thump(rng),
        "transient" => synth_transient(rng),
        "buzz" => synth_buzz(rng),
        other => unreachable!("label table out of sync: {other}"),
    }
}

/// The full 6 × 50 corpus for one seed.
pub fn build_corpus(seed: u64) -> Corpus {
    let mut clips = Vec::with_capacity(LABELS.len() * CLIPS_PER_LABEL);
    let mut master = SeededRng::seed_from_u64(seed);
    for label in 0..LABELS.len() {
        for _ in 0..CLIPS_PER_LABEL {
            let clip_seed: u64 = master.gen();
            let mut rng = SeededRng::seed_from_u64(clip_seed);
            clips.push((label, synth_clip(label, &mut rng)));
        }
    }
    Corpus {
        labels: LABELS.iter().map(|s| s.to_string()).collect(),
        clips,
    }
}

/// Write a corpus as one directory per label plus a `manifest.txt` of
/// `label<TAB>directory` lines. Clips become stereo WAVs with the mono
/// signal duplicated on both channels.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.txt"))?;
    for (id, label) in corpus.labels.iter().enumerate() {
        let sub = dir.join(label);
        fs::create_dir_all(&sub)?;
        writeln!(manifest, "{label}\t{label}")?;
        for (i, clip) in corpus.of_label(id).enumerate() {
            let stream = PcmStream::new(clip.to_vec(), clip.to_vec(), SAMPLE_RATE)
                .expect("equal-length channels");
            write_wav_f32(&stream, sub.join(format!("{label}_{i:03}.wav")))?;
        }
    }
    Ok(())
}

/// Load a corpus written by [`write_corpus`] (mono taken from the left
/// channel). Clips of each label are ordered by file name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
    let mut labels = Vec::new();
    let mut clips = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, sub) = line.split_once('\t').ok_or_else(|| CorpusError::BadManifest {
            line: lineno + 1,
            text: line.to_string(),
        })?;
        let id = labels.len();
        labels.push(label.to_string());
        let mut paths: Vec<_> = fs::read_dir(dir.join(sub))?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "wav"))
            .collect();
        paths.sort();
        for path in paths {
            let stream = read_wav(&path)?;
            clips.push((id, stream.left().to_vec()));
        }
    }
    Ok(Corpus { labels, clips })
}
