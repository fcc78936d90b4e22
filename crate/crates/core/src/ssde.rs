//! Per-frequency sound-source-existence networks and their training.
//!
//! One network per trained bin maps the 5-value interaural feature to an
//! existence score for each of the 326 grid directions. Training data is
//! synthesized from the HRTF set: the normalized pair at the source
//! direction is scaled by a random complex source coefficient and disturbed
//! by complex Gaussian noise, and the target is a spherical Gaussian of
//! existence centered on the source direction. Direction estimates sum the
//! existence maps of whichever bins the caller marks valid and take the
//! argmax.
//!
//! Training runs in f32 and is deterministic for a fixed seed: each bin's
//! network trains single-threaded from its own seed stream, so the bins can
//! be trained in parallel without affecting the result.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::container::{is_eof, read_f32, read_f64, read_magic4, read_u32, read_u64};
use crate::features::{feature_vector, ild, ipd, normalize_pair, FeatureError, IldIpdFeature};
use crate::grid::{angle_between, build_direction_grid, DirectionGrid};
use crate::hrtf::HrtfSet;
use crate::nn::{Adam, Loss, Mlp, Real, SeededRng};
use crate::signal::{BinauralFrame, FRAME_LEN, SAMPLE_RATE};

/// Width of the existence distribution, 15° in radians.
pub const DEFAULT_SIGMA_RAD: f64 = std::f64::consts::PI / 12.0;

/// Network layout: 5 feature inputs through two hidden layers to one
/// existence score per grid direction, sigmoid after every layer.
pub const LAYER_SIZES: [usize; 4] = [5, 500, 500, 326];

const MAGIC: &[u8; 4] = b"SSDE";
const VERSION: u32 = 1;
const SILENT_RETRIES: usize = 16;

#[derive(Debug, Error)]
pub enum SsdeError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("direction id {id} outside grid of {len}")]
    InvalidDirection { id: usize, len: usize },
    #[error("non-finite feature value")]
    InvalidFeature,
    #[error("synthesized example stayed silent at bin {bin} after {SILENT_RETRIES} draws")]
    SilentSynthesis { bin: usize },
    #[error("training diverged at bin {bin}, epoch {epoch} (loss {loss})")]
    Divergence { bin: usize, epoch: usize, loss: f64 },
    #[error("no valid frequency")]
    NoValidFrequency,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not an SSDE container)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("container grid hash {file:#018x} does not match the current grid {current:#018x}")]
    GridMismatch { file: u64, current: u64 },
    #[error("container header field {field} has unexpected value {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("container truncated")]
    Truncated,
}

/// Bins carrying trained networks: every 4th bin between 100 Hz and 12 kHz.
pub fn trained_bins() -> Vec<usize> {
    let hz_per_bin = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    let first = (100.0 / hz_per_bin).ceil() as usize;
    let last = (12_000.0 / hz_per_bin).floor() as usize;
    (first..=last).step_by(4).collect()
}

/// Gaussian existence weight for an angular distance, peak 1 at zero.
pub fn gaussian_weight(delta_rad: f64, sigma_rad: f64) -> f64 {
    (-delta_rad * delta_rad / (2.0 * sigma_rad * sigma_rad)).exp()
}

/// Training target for a source at grid direction `h`: per direction k,
/// exp(−Δ²/(2σ²)) with Δ the angle to the source in radians.
pub fn gaussian_target(
    grid: &DirectionGrid,
    h: usize,
    sigma_rad: f64,
) -> Result<Vec<f64>, SsdeError> {
    if h >= grid.len() {
        return Err(SsdeError::InvalidDirection {
            id: h,
            len: grid.len(),
        });
    }
    let src = grid.get(h);
    Ok(grid
        .directions()
        .iter()
        .map(|d| gaussian_weight(angle_between(src, d).to_radians(), sigma_rad))
        .collect())
}

/// One synthesized training point; the target is looked up by `source`.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub source: usize,
    pub bin: usize,
    pub feature: IldIpdFeature,
}

/// Deterministic synthesis core: normalized HRTF pair at (h, bin) scaled by
/// the source coefficient, plus explicit per-channel noise.
pub fn example_with(
    set: &HrtfSet,
    h: usize,
    bin: usize,
    source: Complex64,
    noise_l: Complex64,
    noise_r: Complex64,
) -> Result<TrainingExample, SsdeError> {
    let (al, ar) = set.normalized_pair(h, bin);
    let pair = normalize_pair(al * source + noise_l, ar * source + noise_r, bin)?;
    Ok(TrainingExample {
        source: h,
        bin,
        feature: IldIpdFeature {
            ild: ild(&pair)?,
            ipd: ipd(&pair)?,
            bin,
        },
    })
}

/// Random training point for a source at grid direction `h`: source
/// magnitude log-uniform in [0.1, 10] with uniform phase, noise SNR drawn
/// uniformly in `snr_db`. SNR is the ratio of the two-channel source power
/// to the expected two-channel noise power. Silent draws are retried.
pub fn synth_training_example(
    set: &HrtfSet,
    h: usize,
    bin: usize,
    snr_db: (f64, f64),
    rng: &mut SeededRng,
) -> Result<TrainingExample, SsdeError> {
    if h >= set.grid().len() {
        return Err(SsdeError::InvalidDirection {
            id: h,
            len: set.grid().len(),
        });
    }
    for _ in 0..SILENT_RETRIES {
        let mag = (rng.gen_range(0.1f64.ln()..10.0f64.ln())).exp();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = Complex64::from_polar(mag, phase);
        let db = rng.gen_range(snr_db.0..=snr_db.1);
        let sigma_component = mag * 10f64.powf(-db / 20.0) / 2.0;
        let mut n = || {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * sigma_component
        };
        let (noise_l, noise_r) = (n(), n());
        match example_with(set, h, bin, s, noise_l, noise_r) {
            Ok(example) => return Ok(example),
            Err(SsdeError::Feature(FeatureError::SilentBin { .. }))
            | Err(SsdeError::Feature(FeatureError::SilentChannel { .. })) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SsdeError::SilentSynthesis { bin })
}

/// Training setup; the defaults are the ones the command-line trainer uses.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub bins: Vec<usize>,
    pub examples_per_bin: usize,
    pub sigma_rad: f64,
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub snr_db: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bins: trained_bins(),
            examples_per_bin: 1000,
            sigma_rad: DEFAULT_SIGMA_RAD,
            epochs: 500,
            batch: 32,
            step: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            snr_db: (5.0, 20.0),
            seed: 0,
        }
    }
}

/// Network owning one trained bin.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdeNet {
    bin: usize,
    net: Mlp<f32>,
}

impl SsdeNet {
    pub fn bin(&self) -> usize {
        self.bin
    }

    pub fn net(&self) -> &Mlp<f32> {
        &self.net
    }

    /// Existence scores for all grid directions; every value in (0, 1).
    pub fn forward(&self, feature: &[f64; 5]) -> Result<Vec<f64>, SsdeError> {
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(SsdeError::InvalidFeature);
        }
        let input: Vec<f32> = feature.iter().map(|&v| v as f32).collect();
        Ok(self.net.forward(&input).iter().map(|&y| y as f64).collect())
    }

    /// Batched [`forward`](Self::forward): existence scores for many
    /// features at once, flattened feature-major.
    pub fn forward_batch(&self, features: &[[f64; 5]]) -> Result<Vec<f64>, SsdeError> {
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SsdeError::InvalidFeature);
        }
        let inputs: Vec<f32> = features
            .iter()
            .flat_map(|f| f.iter().map(|&v| v as f32))
            .collect();
        let acts = self.net.forward_batch_cached(&inputs, features.len());
        Ok(acts
            .last()
            .unwrap()
            .iter()
            .map(|&y| y as f64)
            .collect())
    }
}

/// All trained per-bin networks plus the metadata needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdeModel {
    grid_hash: u64,
    sigma_rad: f64,
    seed: u64,
    epochs: u32,
    nets: Vec<SsdeNet>,
}

impl SsdeModel {
    pub fn nets(&self) -> &[SsdeNet] {
        &self.nets
    }

    pub fn sigma_rad(&self) -> f64 {
        self.sigma_rad
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid_hash(&self) -> u64 {
        self.grid_hash
    }

    /// The net trained nearest to the requested bin; exact midpoints
    /// resolve toward the lower bin.
    pub fn net_for_bin(&self, bin: usize) -> &SsdeNet {
        let idx = match self.nets.binary_search_by_key(&bin, |n| n.bin) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.nets.len() => self.nets.len() - 1,
            Err(i) => {
                let below = bin - self.nets[i - 1].bin;
                let above = self.nets[i].bin - bin;
                if above < below {
                    i
                } else {
                    i - 1
                }
            }
        };
        &self.nets[idx]
    }

    /// Write the container: header, then per net the f32 parameters.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SsdeError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.grid_hash.to_le_bytes())?;
        w.write_all(&self.sigma_rad.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.epochs.to_le_bytes())?;
        let sizes = self.nets.first().map(|n| n.net.sizes()).unwrap_or(&LAYER_SIZES);
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for &s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&(self.nets.len() as u32).to_le_bytes())?;
        for net in &self.nets {
            debug_assert_eq!(net.net.sizes(), sizes);
            w.write_all(&(net.bin as u32).to_le_bytes())?;
        }
        for net in &self.nets {
            for &p in net.net.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a container and check it against the current grid.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SsdeError> {
        let mut r = BufReader::new(File::open(path)?);
        let rd = |e: io::Error| {
            if is_eof(&e) {
                SsdeError::Truncated
            } else {
                SsdeError::Io(e)
            }
        };
        let magic = read_magic4(&mut r).map_err(rd)?;
        if &magic != MAGIC {
            return Err(SsdeError::BadMagic);
        }
        let version = read_u32(&mut r).map_err(rd)?;
        if version != VERSION {
            return Err(SsdeError::BadVersion(version));
        }
        let file_hash = read_u64(&mut r).map_err(rd)?;
        let grid = build_direction_grid();
        if file_hash != grid.hash_u64() {
            return Err(SsdeError::GridMismatch {
                file: file_hash,
                current: grid.hash_u64(),
            });
        }
        let sigma_rad = read_f64(&mut r).map_err(rd)?;
        let seed = read_u64(&mut r).map_err(rd)?;
        let epochs = read_u32(&mut r).map_err(rd)?;
        let layer_count = read_u32(&mut r).map_err(rd)? as usize;
        if !(2..=16).contains(&layer_count) {
            return Err(SsdeError::BadHeader {
                field: "layer count",
                value: layer_count as u64,
            });
        }
        let mut sizes = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            sizes.push(read_u32(&mut r).map_err(rd)? as usize);
        }
        if sizes[0] != 5 {
            return Err(SsdeError::BadHeader {
                field: "input size",
                value: sizes[0] as u64,
            });
        }
        if *sizes.last().unwrap() != grid.len() {
            return Err(SsdeError::BadHeader {
                field: "output size",
                value: *sizes.last().unwrap() as u64,
            });
        }
        let net_count = read_u32(&mut r).map_err(rd)? as usize;
        let mut bins = Vec::with_capacity(net_count);
        for _ in 0..net_count {
            bins.push(read_u32(&mut r).map_err(rd)? as usize);
        }
        let param_count = Mlp::<f32>::param_count(&sizes);
        let mut nets = Vec::with_capacity(net_count);
        for bin in bins {
            let mut params = Vec::with_capacity(param_count);
            for _ in 0..param_count {
                params.push(read_f32(&mut r).map_err(rd)?);
            }
            nets.push(SsdeNet {
                bin,
                net: Mlp::from_params(&sizes, params),
            });
        }
        Ok(Self {
            grid_hash: file_hash,
            sigma_rad,
            seed,
            epochs,
            nets,
        })
    }
}

/// Seed stream for one bin's training, decorrelated across bins.
fn bin_seed(seed: u64, bin: usize) -> u64 {
    let mut z = seed ^ (bin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train one network per configured bin. Bins train in parallel; each is
/// single-threaded on its own seed stream, so the result is identical no
/// matter how the bins are scheduled.
pub fn train(set: &HrtfSet, config: &TrainConfig) -> Result<SsdeModel, SsdeError> {
    let grid = set.grid();
    let mut targets = Vec::with_capacity(grid.len());
    for h in 0..grid.len() {
        let t: Vec<f32> = gaussian_target(grid, h, config.sigma_rad)?
            .into_iter()
            .map(|v| v as f32)
            .collect();
        targets.push(t);
    }

    let mut nets: Vec<SsdeNet> = config
        .bins
        .par_iter()
        .map(|&bin| train_bin(set, &targets, bin, config))
        .collect::<Result<_, _>>()?;
    nets.sort_by_key(|n| n.bin);

    Ok(SsdeModel {
        grid_hash: grid.hash_u64(),
        sigma_rad: config.sigma_rad,
        seed: config.seed,
        epochs: config.epochs as u32,
        nets,
    })
}

fn train_bin(
    set: &HrtfSet,
    targets: &[Vec<f32>],
    bin: usize,
    config: &TrainConfig,
) -> Result<SsdeNet, SsdeError> {
    let grid_len = set.grid().len();
    let mut rng = SeededRng::seed_from_u64(bin_seed(config.seed, bin));
    let mut net = Mlp::<f32>::new(&LAYER_SIZES, &mut rng);

    let mut examples = Vec::with_capacity(config.examples_per_bin);
    for _ in 0..config.examples_per_bin {
        let h = rng.gen_range(0..grid_len);
        let example = synth_training_example(set, h, bin, config.snr_db, &mut rng)?;
        let mut feature = [0f32; 5];
        for (slot, v) in feature.iter_mut().zip(example.feature.as_array()) {
            *slot = v as f32;
        }
        examples.push((h, feature));
    }

    let mut adam = Adam::<f32>::new(
        net.params().len(),
        config.step,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let out_len = *LAYER_SIZES.last().unwrap();
    let mut grads = vec![0f32; net.params().len()];
    let mut inputs = Vec::with_capacity(config.batch * 5);
    let mut deltas = Vec::with_capacity(config.batch * out_len);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(config.batch) {
            inputs.clear();
            for &i in chunk {
                inputs.extend_from_slice(&examples[i].1);
            }
            let acts = net.forward_batch_cached(&inputs, chunk.len());
            let output = acts.last().unwrap();
            deltas.clear();
            for (slot, &i) in chunk.iter().enumerate() {
                let target = &targets[examples[i].0];
                let out = &output[slot * out_len..(slot + 1) * out_len];
                epoch_loss += Loss::MeanSquared.value(out, target).to_f64();
                deltas.extend(Loss::MeanSquared.output_delta(out, target));
            }
            grads.iter_mut().for_each(|g| *g = 0.0);
            net.backprop_batch(&acts, &deltas, chunk.len(), &mut grads);
            adam.apply(net.params_mut(), &grads);
        }
        epoch_loss /= examples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(SsdeError::Divergence {
                bin,
                epoch,
                loss: epoch_loss,
            });
        }
    }
    Ok(SsdeNet { bin, net })
}

/// Per-direction existence scores summed over the valid bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceMap {
    pub scores: Vec<f64>,
}

/// Existence map of one frame: for every listed bin, the feature is
/// computed at that bin and run through the nearest trained network, and
/// the per-bin maps are summed. Bins that are silent in this frame are
/// skipped; if nothing contributes the frame has no valid frequency.
pub fn aggregate_frame(
    model: &SsdeModel,
    frame: &BinauralFrame,
    bins: &[usize],
) -> Result<ExistenceMap, SsdeError> {
    if bins.is_empty() {
        return Err(SsdeError::NoValidFrequency);
    }
    let len = model
        .nets
        .first()
        .map(|n| n.net.sizes().last().copied().unwrap())
        .unwrap_or(0);
    let mut scores = vec![0f64; len];
    let mut contributed = false;
    for &bin in bins {
        let feature = match feature_vector(frame, bin) {
            Ok(f) => f,
            Err(FeatureError::SilentBin { .. }) | Err(FeatureError::SilentChannel { .. }) => {
                continue
            }
            Err(e) => return Err(e.into()),
        };
        let map = model.net_for_bin(bin).forward(&feature.as_array())?;
        for (s, v) in scores.iter_mut().zip(map) {
            *s += v;
        }
        contributed = true;
    }
    if !contributed {
        return Err(SsdeError::NoValidFrequency);
    }
    Ok(ExistenceMap { scores })
}

/// Mean over frames of the per-frame existence maps. Frames silent at
/// every listed bin do not count. The accumulation runs bin-major with one
/// batched forward per bin, which is the fast layout; the result is the
/// same sum as the per-frame reading up to addition order.
pub fn aggregate_frames(
    model: &SsdeModel,
    frames: &[BinauralFrame],
    bins: &[usize],
) -> Result<ExistenceMap, SsdeError> {
    if bins.is_empty() {
        return Err(SsdeError::NoValidFrequency);
    }
    let len = model
        .nets
        .first()
        .map(|n| n.net.sizes().last().copied().unwrap())
        .unwrap_or(0);
    let mut scores = vec![0f64; len];
    let mut contributed = vec![false; frames.len()];
    let mut features: Vec<[f64; 5]> = Vec::with_capacity(frames.len());
    let mut sources: Vec<usize> = Vec::with_capacity(frames.len());
    for &bin in bins {
        features.clear();
        sources.clear();
        for (fi, frame) in frames.iter().enumerate() {
            match feature_vector(frame, bin) {
                Ok(f) => {
                    features.push(f.as_array());
                    sources.push(fi);
                }
                Err(FeatureError::SilentBin { .. }) | Err(FeatureError::SilentChannel { .. }) => {
                    continue
                }
                Err(e) => return Err(e.into()),
            }
        }
        if features.is_empty() {
            continue;
        }
        let maps = model.net_for_bin(bin).forward_batch(&features)?;
        for (slot, &fi) in sources.iter().enumerate() {
            contributed[fi] = true;
            for (s, &v) in scores.iter_mut().zip(&maps[slot * len..(slot + 1) * len]) {
                *s += v;
            }
        }
    }
    let count = contributed.iter().filter(|&&c| c).count();
    if count == 0 {
        return Err(SsdeError::NoValidFrequency);
    }
    for s in scores.iter_mut() {
        *s /= count as f64;
    }
    Ok(ExistenceMap { scores })
}

/// Direction id and score of the maximum; ties go to the lowest id.
pub fn estimate_direction(map: &ExistenceMap) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &s) in map.scores.iter().enumerate() {
        if s > best.1 {
            best = (k, s);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hrtf::HeadModel;
    use crate::signal::binaural_spectra;
    use crate::signal::PcmStream;
    use std::sync::OnceLock;

    fn hrtf() -> &'static HrtfSet {
        static SET: OnceLock<HrtfSet> = OnceLock::new();
        SET.get_or_init(|| HrtfSet::synthesize(&build_direction_grid(), HeadModel::default()))
    }

    fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }

    fn tiny_model(nets: Vec<(usize, Mlp<f32>)>) -> SsdeModel {
        SsdeModel {
            grid_hash: build_direction_grid().hash_u64(),
            sigma_rad: DEFAULT_SIGMA_RAD,
            seed: 0,
            epochs: 0,
            nets: nets
                .into_iter()
                .map(|(bin, net)| SsdeNet { bin, net })
                .collect(),
        }
    }

    #[test]
    fn trained_bins_cover_100hz_to_12khz_every_4th() {
        let bins = trained_bins();
        assert_eq!(bins.len(), 139);
        assert_eq!(bins[0], 5);
        assert_eq!(*bins.last().unwrap(), 557);
        let hz = |b: usize| b as f64 * SAMPLE_RATE as f64 / FRAME_LEN as f64;
        assert!(hz(bins[0]) >= 100.0 && hz(bins[0] - 1) < 100.0);
        assert!(hz(*bins.last().unwrap()) <= 12_000.0);
        assert!(bins.windows(2).all(|w| w[1] - w[0] == 4));
    }

    #[test]
    fn gaussian_weight_matches_the_closed_form() {
        assert_eq!(gaussian_weight(0.0, 0.3), 1.0);
        let sigma = DEFAULT_SIGMA_RAD;
        assert!((gaussian_weight(sigma, sigma) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(gaussian_weight(std::f64::consts::PI, sigma) < 1e-30);
    }

    #[test]
    fn gaussian_target_peaks_at_the_source_direction() {
        let grid = build_direction_grid();
        for h in (0..grid.len()).step_by(13) {
            let target = gaussian_target(&grid, h, DEFAULT_SIGMA_RAD).unwrap();
            assert_eq!(target[h], 1.0);
            let argmax = target
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, h);
            assert!(target.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn gaussian_target_rejects_out_of_grid_ids() {
        let grid = build_direction_grid();
        assert!(matches!(
            gaussian_target(&grid, grid.len(), DEFAULT_SIGMA_RAD),
            Err(SsdeError::InvalidDirection { .. })
        ));
    }

    #[test]
    fn clean_unit_source_reproduces_the_hrtf_feature() {
        let set = hrtf();
        let (h, bin) = (37, 233);
        let example = example_with(
            set,
            h,
            bin,
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
        )
        .unwrap();
        let (al, ar) = set.normalized_pair(h, bin);
        let pair = normalize_pair(al, ar, bin).unwrap();
        assert_eq!(example.feature.ild, ild(&pair).unwrap());
        assert_eq!(example.feature.ipd, ipd(&pair).unwrap());
    }

    #[test]
    fn same_source_different_noise_changes_feature_not_target() {
        let set = hrtf();
        let mut r = rng(99);
        let a = synth_training_example(set, 51, 233, (5.0, 20.0), &mut r).unwrap();
        let b = synth_training_example(set, 51, 233, (5.0, 20.0), &mut r).unwrap();
        assert_eq!(a.source, b.source);
        assert_ne!(a.feature.as_array(), b.feature.as_array());
    }

    #[test]
    fn heavy_noise_shifts_the_ild_distribution() {
        let set = hrtf();
        let h = 80;
        let bin = 233;
        let mean_abs_ild = |snr: (f64, f64), seed: u64| {
            let mut r = rng(seed);
            let mut acc = 0.0;
            for _ in 0..1000 {
                let e = synth_training_example(set, h, bin, snr, &mut r).unwrap();
                acc += e.feature.ild.abs();
            }
            acc / 1000.0
        };
        let clean = mean_abs_ild((60.0, 60.0), 7);
        let drowned = mean_abs_ild((-60.0, -60.0), 7);
        assert!(
            (clean - drowned).abs() > 0.05,
            "clean {clean:.4} vs noise-dominated {drowned:.4}"
        );
    }

    #[test]
    fn zeroed_net_scores_half_everywhere_and_rejects_non_finite() {
        let mut mlp = Mlp::<f32>::new(&[5, 4, 326], &mut rng(3));
        mlp.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let net = SsdeNet { bin: 5, net: mlp };
        let out = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(out.len(), 326);
        assert!(out.iter().all(|&y| y == 0.5));
        assert!(matches!(
            net.forward(&[f64::NAN, 0.0, 0.0, 0.0, 0.0]),
            Err(SsdeError::InvalidFeature)
        ));
    }

    #[test]
    fn nearest_net_resolves_midpoints_downward() {
        let nets = [5usize, 9, 13]
            .iter()
            .map(|&bin| (bin, Mlp::<f32>::new(&[5, 2, 326], &mut rng(bin as u64))))
            .collect();
        let model = tiny_model(nets);
        assert_eq!(model.net_for_bin(5).bin(), 5);
        assert_eq!(model.net_for_bin(6).bin(), 5);
        assert_eq!(model.net_for_bin(7).bin(), 5);
        assert_eq!(model.net_for_bin(8).bin(), 9);
        assert_eq!(model.net_for_bin(2).bin(), 5);
        assert_eq!(model.net_for_bin(500).bin(), 13);
    }

    fn frame_from_noise(seed: u64) -> BinauralFrame {
        let mut r = rng(seed);
        let samples: Vec<(f64, f64)> = (0..FRAME_LEN)
            .map(|_| (r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5)))
            .collect();
        let stream = PcmStream::new(
            samples.iter().map(|s| s.0).collect(),
            samples.iter().map(|s| s.1).collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        binaural_spectra(&stream).unwrap().remove(0)
    }

    #[test]
    fn aggregate_sums_per_bin_maps() {
        let nets = [5usize, 9]
            .iter()
            .map(|&bin| (bin, Mlp::<f32>::new(&[5, 3, 326], &mut rng(bin as u64))))
            .collect();
        let model = tiny_model(nets);
        let frame = frame_from_noise(1);

        let single = aggregate_frame(&model, &frame, &[5]).unwrap();
        let five = feature_vector(&frame, 5).unwrap();
        let direct = model.net_for_bin(5).forward(&five.as_array()).unwrap();
        assert_eq!(single.scores, direct);

        let both = aggregate_frame(&model, &frame, &[5, 9]).unwrap();
        let nine = feature_vector(&frame, 9).unwrap();
        let direct9 = model.net_for_bin(9).forward(&nine.as_array()).unwrap();
        for k in 0..326 {
            assert!((both.scores[k] - (direct[k] + direct9[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_mask_is_no_valid_frequency() {
        let model = tiny_model(vec![(5, Mlp::<f32>::new(&[5, 2, 326], &mut rng(0)))]);
        let frame = frame_from_noise(2);
        assert!(matches!(
            aggregate_frame(&model, &frame, &[]),
            Err(SsdeError::NoValidFrequency)
        ));
    }

    #[test]
    fn silent_frame_is_no_valid_frequency() {
        let model = tiny_model(vec![(5, Mlp::<f32>::new(&[5, 2, 326], &mut rng(0)))]);
        let stream =
            PcmStream::new(vec![0.0; FRAME_LEN], vec![0.0; FRAME_LEN], SAMPLE_RATE).unwrap();
        let frame = binaural_spectra(&stream).unwrap().remove(0);
        assert!(matches!(
            aggregate_frame(&model, &frame, &[5]),
            Err(SsdeError::NoValidFrequency)
        ));
    }

    #[test]
    fn estimate_takes_argmax_with_lowest_id_ties() {
        let mut scores = vec![0.0; 326];
        scores[120] = 3.0;
        assert_eq!(estimate_direction(&ExistenceMap { scores }), (120, 3.0));
        let uniform = ExistenceMap {
            scores: vec![0.25; 326],
        };
        assert_eq!(estimate_direction(&uniform), (0, 0.25));
    }

    #[test]
    fn scaling_the_spectrum_leaves_the_estimate_unchanged() {
        let model = tiny_model(vec![(233, Mlp::<f32>::new(&[5, 6, 326], &mut rng(5)))]);
        let frame = frame_from_noise(3);
        let mut scaled = frame.clone();
        for c in scaled
            .spectrum_left
            .iter_mut()
            .chain(scaled.spectrum_right.iter_mut())
        {
            *c *= 37.5;
        }
        let a = aggregate_frame(&model, &frame, &[233]).unwrap();
        let b = aggregate_frame(&model, &scaled, &[233]).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    fn quick_config(bins: Vec<usize>, epochs: usize, examples: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            bins,
            examples_per_bin: examples,
            epochs,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let set = hrtf();
        let config = quick_config(vec![233], 2, 48, 11);
        let a = train(set, &config).unwrap();
        let b = train(set, &config).unwrap();
        assert_eq!(a, b);
        let c = train(set, &quick_config(vec![233], 2, 48, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_reduces_held_out_loss() {
        let set = hrtf();
        let grid = set.grid();
        let bin = 233;
        let config = quick_config(vec![bin], 12, 256, 21);
        let model = train(set, &config).unwrap();

        let init_rng = &mut rng(bin_seed(config.seed, bin));
        let init = Mlp::<f32>::new(&LAYER_SIZES, init_rng);

        let mut r = rng(777);
        let mut held_out = Vec::new();
        for _ in 0..64 {
            let h = r.gen_range(0..grid.len());
            let e = synth_training_example(set, h, bin, config.snr_db, &mut r).unwrap();
            let target: Vec<f32> = gaussian_target(grid, h, config.sigma_rad)
                .unwrap()
                .into_iter()
                .map(|v| v as f32)
                .collect();
            let mut feature = [0f32; 5];
            for (slot, v) in feature.iter_mut().zip(e.feature.as_array()) {
                *slot = v as f32;
            }
            held_out.push((feature, target));
        }
        let loss_of = |net: &Mlp<f32>| {
            held_out
                .iter()
                .map(|(f, t)| Loss::MeanSquared.value(&net.forward(f), t).to_f64())
                .sum::<f64>()
        };
        let before = loss_of(&init);
        let after = loss_of(model.net_for_bin(bin).net());
        assert!(after < before, "held-out loss {after:.5} vs init {before:.5}");
    }

    #[test]
    fn model_container_round_trips_and_validates() {
        let nets = [5usize, 9]
            .iter()
            .map(|&bin| (bin, Mlp::<f32>::new(&[5, 7, 326], &mut rng(bin as u64 + 40))))
            .collect();
        let model = tiny_model(nets);
        let path = std::env::temp_dir().join("binaural_ssde_roundtrip.ssde");
        model.save(&path).unwrap();
        let loaded = SsdeModel::load(&path).unwrap();
        assert_eq!(model, loaded);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(SsdeModel::load(&path), Err(SsdeError::BadMagic)));

        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[9] ^= 0x55;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            SsdeModel::load(&path),
            Err(SsdeError::GridMismatch { .. })
        ));

        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(SsdeModel::load(&path), Err(SsdeError::Truncated)));
        std::fs::remove_file(&path).ok();
    }
}
