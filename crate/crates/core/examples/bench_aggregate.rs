use binaural_core::grid::{angle_between, build_direction_grid, Direction, DirectionGrid};
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::nn::{Adam, Loss, Mlp, SeededRng};
use binaural_core::ssde::{
    example_with, gaussian_target, synth_training_example, trained_bins, DEFAULT_SIGMA_RAD,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use std::time::Instant;

const SIZES: [usize; 4] = [5, 500, 500, 326];
const FRAMES: usize = 29;
const SNR_DB: f64 = 15.0;

struct BinState {
    bin: usize,
    net: Mlp<f32>,
    adam: Adam<f32>,
    examples: Vec<(usize, [f32; 5])>,
    rng: SeededRng,
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let max_epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let n_bins: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(18);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(7);
    let checkpoints = [25, 50, 100, 200, 350, 500, 750, 1000];

    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    let all_bins = trained_bins();
    let stride = (all_bins.len() / n_bins).max(1);
    let bins: Vec<usize> = all_bins.iter().step_by(stride).take(n_bins).copied().collect();
    eprintln!("bins: {bins:?}");

    let targets: Vec<Vec<f32>> = (0..grid.len())
        .map(|h| {
            gaussian_target(&grid, h, DEFAULT_SIGMA_RAD)
                .unwrap()
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect();

    let mut states: Vec<BinState> = bins
        .iter()
        .map(|&bin| {
            let mut rng = SeededRng::seed_from_u64(seed ^ (bin as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let net = Mlp::<f32>::new(&SIZES, &mut rng);
            let mut examples = Vec::with_capacity(1000);
            for _ in 0..1000 {
                let h = rng.gen_range(0..grid.len());
                let ex = synth_training_example(&set, h, bin, (5.0, 20.0), &mut rng).unwrap();
                let mut f = [0f32; 5];
                for (s, v) in f.iter_mut().zip(ex.feature.as_array()) {
                    *s = v as f32;
                }
                examples.push((h, f));
            }
            let adam = Adam::<f32>::new(net.params().len(), 1e-3, 0.9, 0.999, 1e-8);
            BinState { bin, net, adam, examples, rng }
        })
        .collect();

    let out_len = SIZES[3];
    let t0 = Instant::now();
    let mut grads = vec![0f32; states[0].net.params().len()];
    for epoch in 0..max_epochs {
        for st in states.iter_mut() {
            let mut order: Vec<usize> = (0..st.examples.len()).collect();
            order.shuffle(&mut st.rng);
            for chunk in order.chunks(32) {
                let mut inputs = Vec::with_capacity(chunk.len() * 5);
                for &i in chunk {
                    inputs.extend_from_slice(&st.examples[i].1);
                }
                let acts = st.net.forward_batch_cached(&inputs, chunk.len());
                let output = acts.last().unwrap().clone();
                let mut deltas = Vec::with_capacity(chunk.len() * out_len);
                for (slot, &i) in chunk.iter().enumerate() {
                    let t = &targets[st.examples[i].0];
                    let o = &output[slot * out_len..(slot + 1) * out_len];
                    deltas.extend(Loss::MeanSquared.output_delta(o, t));
                }
                grads.iter_mut().for_each(|g| *g = 0.0);
                st.net.backprop_batch(&acts, &deltas, chunk.len(), &mut grads);
                st.adam.apply(st.net.params_mut(), &grads);
            }
        }
        if checkpoints.contains(&(epoch + 1)) || epoch + 1 == max_epochs {
            aggregate_eval(&states, &set, &grid, epoch + 1, t0);
        }
    }
}

fn aggregate_eval(states: &[BinState], set: &HrtfSet, grid: &DirectionGrid, epoch: usize, t0: Instant) {
    let mut rng = SeededRng::seed_from_u64(0xE7A1);
    let scale = 10f64.powf(-SNR_DB / 20.0) / 2.0;
    let mut err_sum = 0.0;
    let mut mirror_sum = 0.0;
    let mut hits = 0usize;
    let (mut lr_ok, mut lr_n, mut tb_ok, mut tb_n) = (0usize, 0usize, 0usize, 0usize);
    for h in 0..grid.len() {
        let mut scores = vec![0f64; grid.len()];
        for st in states {
            let mut feats: Vec<f32> = Vec::with_capacity(FRAMES * 5);
            let mut count = 0usize;
            for _ in 0..FRAMES {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let s = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
                let sc = s.norm() * scale;
                let mut n = || {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re, im) * sc
                };
                let (nl, nr) = (n(), n());
                if let Ok(ex) = example_with(set, h, st.bin, s, nl, nr) {
                    for v in ex.feature.as_array() {
                        feats.push(v as f32);
                    }
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let acts = st.net.forward_batch_cached(&feats, count);
            let out = acts.last().unwrap();
            for slot in 0..count {
                for (k, &v) in out[slot * grid.len()..(slot + 1) * grid.len()].iter().enumerate() {
                    scores[k] += v as f64;
                }
            }
        }
        let am = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let truth = grid.get(h);
        let est = grid.get(am);
        let err = angle_between(est, truth);
        let mirror = angle_between(est, &truth.mirror_front_back());
        err_sum += err;
        mirror_sum += err.min(mirror);
        if am == h {
            hits += 1;
        }
        tally_planes(truth, est, &mut lr_ok, &mut lr_n, &mut tb_ok, &mut tb_n);
    }
    let d = grid.len() as f64;
    println!(
        "epoch {epoch:>4}: mean {:.1}deg mirror {:.1}deg top1 {:.3} LR {}/{} ({:.2}) TB {}/{} ({:.2}) [{:.0?}]",
        err_sum / d,
        mirror_sum / d,
        hits as f64 / d,
        lr_ok, lr_n, lr_ok as f64 / lr_n.max(1) as f64,
        tb_ok, tb_n, tb_ok as f64 / tb_n.max(1) as f64,
        t0.elapsed()
    );
}

fn tally_planes(
    truth: &Direction,
    est: &Direction,
    lr_ok: &mut usize,
    lr_n: &mut usize,
    tb_ok: &mut usize,
    tb_n: &mut usize,
) {
    let el = truth.elevation_deg().abs();
    let az = truth.azimuth_deg().abs();
    let median_dist = truth.y.abs().clamp(-1.0, 1.0).asin().to_degrees();
    if el < 6.0 && median_dist >= 6.0 {
        *lr_n += 1;
        if est.y.signum() == truth.y.signum() {
            *lr_ok += 1;
        }
    }
    if (az < 6.0 || (180.0 - az) < 6.0) && el >= 6.0 {
        *tb_n += 1;
        if est.z.signum() == truth.z.signum() {
            *tb_ok += 1;
        }
    }
}
