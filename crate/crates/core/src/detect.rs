//! Environmental-sound detection.
//!
//! A small convolutional network reads normalized log-mel images (128
//! bands by 25 frames) of one channel and outputs per-label existence
//! probabilities through sigmoids. The two channels are evaluated
//! separately and fused by volume weighting,
//! p = (V_l·p_l + V_r·p_r) / (V_l + V_r), so the louder ear dominates.
//! Each label also carries its characteristic frequency bins, measured
//! from the training clips; detections attach those bins so the direction
//! estimator can restrict itself to the frequencies the sound actually
//! occupies.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::container::{is_eof, read_f64, read_magic4, read_u32, read_u64};
use crate::corpus::Corpus;
use crate::mel::{mel_spectrogram, Channel, MelError, MelFilterbank, MelSpectrogram, MEL_FRAMES};
use crate::nn::{Adam, Cnn, CnnShape, Loss, SeededRng};
use crate::signal::{binaural_spectra, BinauralFrame, PcmStream, SignalError, DEFAULT_HOP, FRAME_LEN, SAMPLE_RATE};
use crate::ssde::trained_bins;

/// Detection probability threshold p*.
pub const DETECT_THRESHOLD: f64 = 0.5;

/// A bin participates downstream only when its magnitude exceeds this
/// multiple of the stored noise floor.
pub const NOISE_GATE_FACTOR: f64 = 10.0;

/// Characteristic bins keep every bin whose label-averaged magnitude is at
/// least this fraction of the label's peak.
pub const CHARACTERISTIC_FRACTION: f64 = 0.2;

/// Bins returned when thresholding yields nothing.
pub const CHARACTERISTIC_FALLBACK: usize = 8;

const MAGIC: &[u8; 4] = b"MELC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("corpus needs at least two labels, found {0}")]
    TooFewLabels(usize),
    #[error("label {label:?} has {got} clips, need at least {need}")]
    TooFewClips { label: String, got: usize, need: usize },
    #[error("unknown label id {0}")]
    UnknownLabel(usize),
    #[error("clip yields {got} frames, need {need}")]
    ClipTooShort { got: usize, need: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("probability vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("volumes must be nonnegative and sum to a positive value")]
    ZeroVolume,
    #[error("noise floor has {got} bins, expected {expected}")]
    FloorLength { got: usize, expected: usize },
    #[error(transparent)]
    Mel(#[from] MelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a detector container)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("container header field {field} has unexpected value {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("container truncated")]
    Truncated,
}

/// Network input geometry for `labels` output classes: two 5×5
/// convolutions of 16 and 32 kernels, each followed by a 2×2 max-pool,
/// then a 128-wide rectifier layer and a sigmoid output layer.
pub fn cnn_shape(labels: usize) -> CnnShape {
    CnnShape {
        in_h: crate::mel::MEL_BANDS,
        in_w: MEL_FRAMES,
        conv1: 16,
        conv2: 32,
        hidden: 128,
        labels,
    }
}

/// Trained detector: the network, its label names, per-label
/// characteristic bins, and the noise-floor spectrum used to gate bins at
/// detection time.
#[derive(Debug, Clone)]
pub struct MelCnnModel {
    labels: Vec<String>,
    characteristic: Vec<Vec<usize>>,
    noise_floor: Vec<f64>,
    cnn: Cnn<f32>,
    seed: u64,
    epochs: u32,
}

impl MelCnnModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cnn(&self) -> &Cnn<f32> {
        &self.cnn
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epochs(&self) -> u32 {
        self.epochs
    }

    /// Characteristic frequency bins of one label, ascending.
    pub fn characteristic_bins(&self, label: usize) -> Result<&[usize], DetectError> {
        self.characteristic
            .get(label)
            .map(|v| v.as_slice())
            .ok_or(DetectError::UnknownLabel(label))
    }

    /// Per-bin magnitude floor, one entry per one-sided spectrum bin.
    pub fn noise_floor(&self) -> &[f64] {
        &self.noise_floor
    }

    /// Replace the stored noise floor, e.g. with a measured spectrum.
    pub fn set_noise_floor(&mut self, floor: Vec<f64>) -> Result<(), DetectError> {
        if floor.len() != self.noise_floor.len() {
            return Err(DetectError::FloorLength {
                got: floor.len(),
                expected: self.noise_floor.len(),
            });
        }
        self.noise_floor = floor;
        Ok(())
    }

    /// Per-label probabilities for one mel image.
    pub fn forward(&self, mel: &MelSpectrogram) -> Vec<f64> {
        let input: Vec<f32> = mel.values.iter().map(|&v| v as f32).collect();
        self.cnn.forward(&input).into_iter().map(|p| p as f64).collect()
    }

    /// Write the container: header, label table, characteristic bins,
    /// noise floor, then the network parameters.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.epochs.to_le_bytes())?;
        w.write_all(&(self.labels.len() as u32).to_le_bytes())?;
        for (name, bins) in self.labels.iter().zip(&self.characteristic) {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(bins.len() as u32).to_le_bytes())?;
            for &b in bins {
                w.write_all(&(b as u32).to_le_bytes())?;
            }
        }
        w.write_all(&(self.noise_floor.len() as u32).to_le_bytes())?;
        for &v in &self.noise_floor {
            w.write_all(&v.to_le_bytes())?;
        }
        for &p in self.cnn.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectError> {
        let mut r = BufReader::new(File::open(path)?);
        let rd = |e: io::Error| {
            if is_eof(&e) {
                DetectError::Truncated
            } else {
                DetectError::Io(e)
            }
        };
        let magic = read_magic4(&mut r).map_err(rd)?;
        if &magic != MAGIC {
            return Err(DetectError::BadMagic);
        }
        let version = read_u32(&mut r).map_err(rd)?;
        if version != VERSION {
            return Err(DetectError::BadVersion(version));
        }
        let seed = read_u64(&mut r).map_err(rd)?;
        let epochs = read_u32(&mut r).map_err(rd)?;
        let label_count = read_u32(&mut r).map_err(rd)? as usize;
        if !(2..=64).contains(&label_count) {
            return Err(DetectError::BadHeader {
                field: "label count",
                value: label_count as u64,
            });
        }
        let mut labels = Vec::with_capacity(label_count);
        let mut characteristic = Vec::with_capacity(label_count);
        for _ in 0..label_count {
            let name_len = read_u32(&mut r).map_err(rd)? as usize;
            if name_len > 256 {
                return Err(DetectError::BadHeader {
                    field: "label name length",
                    value: name_len as u64,
                });
            }
            let mut bytes = vec![0u8; name_len];
            io::Read::read_exact(&mut r, &mut bytes).map_err(rd)?;
            let name = String::from_utf8(bytes).map_err(|_| DetectError::BadHeader {
                field: "label name",
                value: 0,
            })?;
            let bin_count = read_u32(&mut r).map_err(rd)? as usize;
            let mut bins = Vec::with_capacity(bin_count);
            for _ in 0..bin_count {
                bins.push(read_u32(&mut r).map_err(rd)? as usize);
            }
            labels.push(name);
            characteristic.push(bins);
        }
        let floor_len = read_u32(&mut r).map_err(rd)? as usize;
        if floor_len != FRAME_LEN / 2 + 1 {
            return Err(DetectError::BadHeader {
                field: "noise floor length",
                value: floor_len as u64,
            });
        }
        let mut noise_floor = Vec::with_capacity(floor_len);
        for _ in 0..floor_len {
            noise_floor.push(read_f64(&mut r).map_err(rd)?);
        }
        let shape = cnn_shape(label_count);
        let mut params = Vec::with_capacity(shape.param_count());
        for _ in 0..shape.param_count() {
            let mut b = [0u8; 4];
            io::Read::read_exact(&mut r, &mut b).map_err(rd)?;
            params.push(f32::from_le_bytes(b));
        }
        Ok(Self {
            labels,
            characteristic,
            noise_floor,
            cnn: Cnn::from_params(shape, params),
            seed,
            epochs,
        })
    }
}

/// Volume-weighted fusion of the two ears' label probabilities.
pub fn fuse_binaural(
    p_left: &[f64],
    p_right: &[f64],
    v_left: f64,
    v_right: f64,
) -> Result<Vec<f64>, DetectError> {
    if p_left.len() != p_right.len() {
        return Err(DetectError::LengthMismatch {
            left: p_left.len(),
            right: p_right.len(),
        });
    }
    let sum = v_left + v_right;
    if !(v_left >= 0.0) || !(v_right >= 0.0) || !(sum > 0.0) {
        return Err(DetectError::ZeroVolume);
    }
    Ok(p_left
        .iter()
        .zip(p_right)
        .map(|(&l, &r)| (v_left * l + v_right * r) / sum)
        .collect())
}

/// Label-averaged magnitude per trained bin: clips are analyzed mono and
/// their per-frame spectra averaged.
fn label_magnitudes(corpus: &Corpus, label: usize) -> Result<Vec<(usize, f64)>, DetectError> {
    if label >= corpus.labels.len() {
        return Err(DetectError::UnknownLabel(label));
    }
    let bins = trained_bins();
    let mut sums = vec![0.0f64; bins.len()];
    let mut frames_total = 0usize;
    for clip in corpus.of_label(label) {
        let stream = PcmStream::new(clip.to_vec(), clip.to_vec(), SAMPLE_RATE)?;
        let frames = binaural_spectra(&stream)?;
        for frame in &frames {
            for (slot, &bin) in bins.iter().enumerate() {
                sums[slot] += frame.spectrum_left[bin].norm();
            }
        }
        frames_total += frames.len();
    }
    if frames_total > 0 {
        for s in sums.iter_mut() {
            *s /= frames_total as f64;
        }
    }
    Ok(bins.into_iter().zip(sums).collect())
}

/// Characteristic frequency bins of one label: every trained bin whose
/// label-averaged magnitude reaches [`CHARACTERISTIC_FRACTION`] of the
/// label's peak. Labels without usable energy fall back to the loudest
/// [`CHARACTERISTIC_FALLBACK`] bins.
pub fn characteristic_frequencies(corpus: &Corpus, label: usize) -> Result<Vec<usize>, DetectError> {
    let mags = label_magnitudes(corpus, label)?;
    let peak = mags.iter().map(|&(_, m)| m).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(mags
            .iter()
            .take(CHARACTERISTIC_FALLBACK)
            .map(|&(bin, _)| bin)
            .collect());
    }
    let selected: Vec<usize> = mags
        .iter()
        .filter(|&&(_, m)| m >= CHARACTERISTIC_FRACTION * peak)
        .map(|&(bin, _)| bin)
        .collect();
    if selected.is_empty() {
        let mut order: Vec<&(usize, f64)> = mags.iter().collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut bins: Vec<usize> = order
            .into_iter()
            .take(CHARACTERISTIC_FALLBACK)
            .map(|&(bin, _)| bin)
            .collect();
        bins.sort_unstable();
        return Ok(bins);
    }
    Ok(selected)
}

/// One training or evaluation image with its multi-hot targets.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    pub input: Vec<f32>,
    pub targets: Vec<f32>,
}

/// Detector training setup; the defaults are what the command-line
/// trainer uses.
#[derive(Debug, Clone)]
pub struct MelTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Clips per label withheld from training, taken from the end of each
    /// label's clip list.
    pub holdout_per_label: usize,
    /// Mixed two-label training examples generated per label pair.
    pub mixed_per_pair: usize,
    /// Mixed two-label evaluation examples generated per label pair from
    /// the held-out clips.
    pub holdout_mixed_per_pair: usize,
    pub seed: u64,
}

impl Default for MelTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 16,
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            holdout_per_label: 10,
            mixed_per_pair: 8,
            holdout_mixed_per_pair: 2,
            seed: 0,
        }
    }
}

/// Normalized log-mel image of the first 25 frames of a mono clip.
fn mel_input(samples: &[f64], bank: &MelFilterbank) -> Result<Vec<f32>, DetectError> {
    let stream = PcmStream::new(samples.to_vec(), samples.to_vec(), SAMPLE_RATE)?;
    let frames = binaural_spectra(&stream)?;
    if frames.len() < MEL_FRAMES {
        return Err(DetectError::ClipTooShort {
            got: frames.len(),
            need: MEL_FRAMES,
        });
    }
    let mel = mel_spectrogram(&frames[..MEL_FRAMES], Channel::Left, bank)?;
    Ok(mel.values.iter().map(|&v| v as f32).collect())
}

fn one_hot(label: usize, labels: usize) -> Vec<f32> {
    let mut t = vec![0f32; labels];
    t[label] = 1.0;
    t
}

fn mix_clips(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().min(b.len());
    a[..n].iter().zip(&b[..n]).map(|(&x, &y)| x + y).collect()
}

/// Builds the training and held-out example sets. Per label the last
/// `holdout_per_label` clips are withheld; each set also contains mixed
/// clips, the sample-wise sum of two clips of different labels with both
/// target entries set.
pub fn build_examples(
    corpus: &Corpus,
    config: &MelTrainConfig,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), DetectError> {
    let n_labels = corpus.labels.len();
    if n_labels < 2 {
        return Err(DetectError::TooFewLabels(n_labels));
    }
    let bank = MelFilterbank::standard();
    let mut train_pool: Vec<Vec<&[f64]>> = Vec::with_capacity(n_labels);
    let mut hold_pool: Vec<Vec<&[f64]>> = Vec::with_capacity(n_labels);
    for (id, name) in corpus.labels.iter().enumerate() {
        let clips: Vec<&[f64]> = corpus.of_label(id).collect();
        if clips.len() < config.holdout_per_label + 2 {
            return Err(DetectError::TooFewClips {
                label: name.clone(),
                got: clips.len(),
                need: config.holdout_per_label + 2,
            });
        }
        let split = clips.len() - config.holdout_per_label;
        train_pool.push(clips[..split].to_vec());
        hold_pool.push(clips[split..].to_vec());
    }

    let mut rng = SeededRng::seed_from_u64(config.seed ^ 0x6D69_7865_645F_6D65);
    let build = |pools: &[Vec<&[f64]>], mixed_per_pair: usize, rng: &mut SeededRng| {
        let mut out = Vec::new();
        for (label, clips) in pools.iter().enumerate() {
            for clip in clips {
                out.push((clip.to_vec(), one_hot(label, n_labels)));
            }
        }
        for a in 0..n_labels {
            for b in a + 1..n_labels {
                for _ in 0..mixed_per_pair {
                    let ca = pools[a][rng.gen_range(0..pools[a].len())];
                    let cb = pools[b][rng.gen_range(0..pools[b].len())];
                    let mut t = one_hot(a, n_labels);
                    t[b] = 1.0;
                    out.push((mix_clips(ca, cb), t));
                }
            }
        }
        out
    };
    let train_raw = build(&train_pool, config.mixed_per_pair, &mut rng);
    let hold_raw = build(&hold_pool, config.holdout_mixed_per_pair, &mut rng);

    let to_examples = |raw: Vec<(Vec<f64>, Vec<f32>)>| -> Result<Vec<LabeledExample>, DetectError> {
        raw.into_iter()
            .map(|(samples, targets)| {
                Ok(LabeledExample {
                    input: mel_input(&samples, &bank)?,
                    targets,
                })
            })
            .collect()
    };
    Ok((to_examples(train_raw)?, to_examples(hold_raw)?))
}

/// Mean cross-entropy of the detector over a set of examples.
pub fn bce_loss(model: &MelCnnModel, examples: &[LabeledExample]) -> f64 {
    let mut acc = 0.0;
    for ex in examples {
        let out = model.cnn.forward(&ex.input);
        acc += Loss::CrossEntropy.value(&out, &ex.targets) as f64;
    }
    acc / examples.len().max(1) as f64
}

/// Trains the detector on single-label and mixed clips with Adam on the
/// per-label cross-entropy. Deterministic for a fixed seed. The stored
/// characteristic bins are computed from the full corpus; the noise floor
/// starts at zero (no gating) until one is stored.
pub fn train_melcnn(corpus: &Corpus, config: &MelTrainConfig) -> Result<MelCnnModel, DetectError> {
    let (train, _) = build_examples(corpus, config)?;
    let n_labels = corpus.labels.len();
    let shape = cnn_shape(n_labels);
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut cnn = Cnn::<f32>::new(shape, &mut rng);
    let mut adam = Adam::<f32>::new(
        cnn.params().len(),
        config.step,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut grads = vec![0f32; cnn.params().len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(config.batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let ex = &train[i];
                let trace = cnn.forward_cached(&ex.input);
                epoch_loss += Loss::CrossEntropy.value(&trace.output, &ex.targets) as f64;
                let delta = Loss::CrossEntropy.output_delta(&trace.output, &ex.targets);
                cnn.backprop(&trace, &delta, &mut grads);
            }
            adam.apply(cnn.params_mut(), &grads);
        }
        if !epoch_loss.is_finite() {
            return Err(DetectError::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
    }

    let characteristic = (0..n_labels)
        .map(|label| characteristic_frequencies(corpus, label))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MelCnnModel {
        labels: corpus.labels.clone(),
        characteristic,
        noise_floor: vec![0.0; FRAME_LEN / 2 + 1],
        cnn,
        seed: config.seed,
        epochs: config.epochs as u32,
    })
}

/// Macro-averaged F-score at a decision threshold: per label the harmonic
/// mean of precision and recall, averaged over labels.
pub fn macro_f_score(model: &MelCnnModel, examples: &[LabeledExample], threshold: f64) -> f64 {
    let n_labels = model.labels.len();
    let mut tp = vec![0usize; n_labels];
    let mut fp = vec![0usize; n_labels];
    let mut fn_ = vec![0usize; n_labels];
    for ex in examples {
        let out = model.cnn.forward(&ex.input);
        for i in 0..n_labels {
            let predicted = out[i] as f64 >= threshold;
            let actual = ex.targets[i] >= 0.5;
            match (predicted, actual) {
                (true, true) => tp[i] += 1,
                (true, false) => fp[i] += 1,
                (false, true) => fn_[i] += 1,
                (false, false) => {}
            }
        }
    }
    let mut sum = 0.0;
    for i in 0..n_labels {
        let denom = 2 * tp[i] + fp[i] + fn_[i];
        sum += if denom == 0 {
            0.0
        } else {
            2.0 * tp[i] as f64 / denom as f64
        };
    }
    sum / n_labels as f64
}

/// One detected sound: the label, its fused peak probability, the
/// characteristic bins that passed the noise gate, and the covered frame
/// span (`end_frame` exclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionEvent {
    pub label: usize,
    pub probability_milli: u32,
    pub bins: Vec<usize>,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl DetectionEvent {
    pub fn probability(&self) -> f64 {
        self.probability_milli as f64 / 1000.0
    }
}

/// Root-mean-square of the samples covered by a window of frames.
fn window_rms(samples: &[f64], start_frame: usize, frames: usize) -> f64 {
    let lo = (start_frame * DEFAULT_HOP).min(samples.len());
    let hi = ((start_frame + frames - 1) * DEFAULT_HOP + FRAME_LEN).min(samples.len());
    if hi <= lo {
        return 0.0;
    }
    let span = &samples[lo..hi];
    (span.iter().map(|&s| s * s).sum::<f64>() / span.len() as f64).sqrt()
}

/// Mean magnitude of one bin over a frame span, taking the louder channel
/// per frame.
fn span_magnitude(frames: &[BinauralFrame], start: usize, end: usize, bin: usize) -> f64 {
    let span = &frames[start..end.min(frames.len())];
    if span.is_empty() {
        return 0.0;
    }
    span.iter()
        .map(|f| f.spectrum_left[bin].norm().max(f.spectrum_right[bin].norm()))
        .sum::<f64>()
        / span.len() as f64
}

/// Runs the detector over a stereo stream with a sliding 25-frame window.
///
/// Windows advance one frame at a time; each is scored per channel, the
/// channel probabilities fused by window volume, and per label the runs of
/// consecutive windows at or above `threshold` merge into one event with
/// the peak probability of the run. Fully silent windows are skipped, so
/// silence produces no events. Each event carries the label's
/// characteristic bins, reduced to those whose magnitude over the event
/// span exceeds [`NOISE_GATE_FACTOR`] times the stored noise floor; when
/// nothing survives the gate the stored bins are kept unreduced.
pub fn detect(
    stream: &PcmStream,
    model: &MelCnnModel,
    threshold: f64,
) -> Result<Vec<DetectionEvent>, DetectError> {
    let frames = binaural_spectra(stream)?;
    if frames.len() < MEL_FRAMES {
        return Ok(Vec::new());
    }
    let bank = MelFilterbank::standard();
    let n_labels = model.labels.len();
    let windows = frames.len() - MEL_FRAMES + 1;
    let mut fused: Vec<Option<Vec<f64>>> = Vec::with_capacity(windows);
    for w in 0..windows {
        let span = &frames[w..w + MEL_FRAMES];
        let mel_l = mel_spectrogram(span, Channel::Left, &bank)?;
        let mel_r = mel_spectrogram(span, Channel::Right, &bank)?;
        let silent_l = mel_l.values.iter().all(|&v| v == 0.0);
        let silent_r = mel_r.values.iter().all(|&v| v == 0.0);
        if silent_l && silent_r {
            fused.push(None);
            continue;
        }
        let v_l = window_rms(stream.left(), w, MEL_FRAMES);
        let v_r = window_rms(stream.right(), w, MEL_FRAMES);
        if v_l + v_r <= 0.0 {
            fused.push(None);
            continue;
        }
        let p_l = model.forward(&mel_l);
        let p_r = model.forward(&mel_r);
        fused.push(Some(fuse_binaural(&p_l, &p_r, v_l, v_r)?));
    }

    let mut events = Vec::new();
    for label in 0..n_labels {
        let mut run: Option<(usize, usize, f64)> = None;
        for w in 0..=windows {
            let p = if w < windows {
                fused[w].as_ref().map(|v| v[label])
            } else {
                None
            };
            match (p, &mut run) {
                (Some(p), Some((_, last, peak))) if p >= threshold => {
                    *last = w;
                    if p > *peak {
                        *peak = p;
                    }
                }
                (Some(p), None) if p >= threshold => {
                    run = Some((w, w, p));
                }
                (_, Some((first, last, peak))) => {
                    events.push(build_event(
                        model, &frames, label, *first, *last, *peak,
                    )?);
                    run = None;
                }
                _ => {}
            }
        }
    }
    events.sort_by_key(|e| (e.start_frame, e.label));
    Ok(events)
}

fn build_event(
    model: &MelCnnModel,
    frames: &[BinauralFrame],
    label: usize,
    first: usize,
    last: usize,
    peak: f64,
) -> Result<DetectionEvent, DetectError> {
    let start_frame = first;
    let end_frame = last + MEL_FRAMES;
    let stored = model.characteristic_bins(label)?;
    let floor = model.noise_floor();
    let gated: Vec<usize> = stored
        .iter()
        .copied()
        .filter(|&bin| {
            span_magnitude(frames, start_frame, end_frame, bin) > NOISE_GATE_FACTOR * floor[bin]
        })
        .collect();
    let bins = if gated.is_empty() { stored.to_vec() } else { gated };
    Ok(DetectionEvent {
        label,
        probability_milli: (peak * 1000.0).round() as u32,
        bins,
        start_frame,
        end_frame,
    })
}
