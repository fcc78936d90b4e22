use binaural_core::features::{ild, ipd, normalize_pair};
use binaural_core::grid::{angle_between, build_direction_grid};
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::nn::{Adam, Loss, Mlp, SeededRng};
use binaural_core::ssde::{gaussian_target, synth_training_example, DEFAULT_SIGMA_RAD};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use std::time::Instant;

const SIZES: [usize; 4] = [5, 500, 500, 326];

fn argmax(out: &[f32]) -> usize {
    out.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let bin: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(233);
    let init_scale: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let loss_mode: String = args.get(4).cloned().unwrap_or_else(|| "mse".into());
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(32);
    let snr: (f64, f64) = (200.0, 200.0);

    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    let sigma: f64 = std::env::var("SIGMA_RAD")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_SIGMA_RAD);
    let targets: Vec<Vec<f32>> = (0..grid.len())
        .map(|h| {
            gaussian_target(&grid, h, sigma)
                .unwrap()
                .into_iter()
                .map(|v| v as f32)
                .collect()
        })
        .collect();

    let mut rng = SeededRng::seed_from_u64(42);
    let mut net = Mlp::<f32>::new(&SIZES, &mut rng);
    if init_scale != 1.0 {
        let first_only = std::env::var("FIRST_LAYER_ONLY").is_ok();
        let w1 = SIZES[0] * SIZES[1];
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            if !first_only || i < w1 {
                *p *= init_scale;
            }
        }
    }
    let fix_phase = std::env::var("FIX_PHASE").is_ok();
    let n_examples: usize = std::env::var("N_EXAMPLES")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1000);
    let mut examples = Vec::new();
    for _ in 0..n_examples {
        let h = rng.gen_range(0..grid.len());
        let ex = if fix_phase {
            binaural_core::ssde::example_with(
                &set,
                h,
                bin,
                rustfft::num_complex::Complex64::new(1.0, 0.0),
                rustfft::num_complex::Complex64::new(0.0, 0.0),
                rustfft::num_complex::Complex64::new(0.0, 0.0),
            )
            .unwrap()
        } else {
            synth_training_example(&set, h, bin, snr, &mut rng).unwrap()
        };
        let mut f = [0f32; 5];
        for (s, v) in f.iter_mut().zip(ex.feature.as_array()) {
            *s = v as f32;
        }
        examples.push((h, f));
    }

    let loss = match loss_mode.as_str() {
        "mse" => Loss::MeanSquared,
        "ce" => Loss::CrossEntropy,
        other => panic!("unknown loss {other}"),
    };
    let out_len = SIZES[3];
    let mut adam = Adam::<f32>::new(net.params().len(), lr, 0.9, 0.999, 1e-8);
    let mut grads = vec![0f32; net.params().len()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let t0 = Instant::now();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(batch) {
            let mut inputs = Vec::with_capacity(chunk.len() * 5);
            for &i in chunk {
                inputs.extend_from_slice(&examples[i].1);
            }
            let acts = net.forward_batch_cached(&inputs, chunk.len());
            let output = acts.last().unwrap().clone();
            let mut deltas = Vec::with_capacity(chunk.len() * out_len);
            for (slot, &i) in chunk.iter().enumerate() {
                let t = &targets[examples[i].0];
                let o = &output[slot * out_len..(slot + 1) * out_len];
                epoch_loss += Loss::MeanSquared.value(o, t) as f64;
                deltas.extend(loss.output_delta(o, t));
            }
            grads.iter_mut().for_each(|g| *g = 0.0);
            net.backprop_batch(&acts, &deltas, chunk.len(), &mut grads);
            adam.apply(net.params_mut(), &grads);
        }
        let checkpoint = epoch + 1 == epochs
            || [100, 250, 500, 750, 1000, 1500, 2000, 3000].contains(&(epoch + 1));
        if epoch % 50 == 0 || checkpoint {
            eprintln!("epoch {epoch}: mse {:.6}", epoch_loss / n_examples as f64);
        }
        if checkpoint {
            let (top1, meanerr) = clean_eval(&net, &set, &grid, bin, out_len);
            println!(
                "  epoch {:>5}: clean top1 {top1:.3} meanerr {meanerr:.1}deg ({:.0?})",
                epoch + 1,
                t0.elapsed()
            );
        }
    }
    let dt = t0.elapsed();

    let (top1, meanerr) = clean_eval(&net, &set, &grid, bin, out_len);
    println!(
        "bin {bin} init x{init_scale} loss {loss_mode} lr {lr} batch {batch} sigma {sigma:.3} epochs {epochs} {dt:.1?}: clean top1 {top1:.3} meanerr {meanerr:.1}deg"
    );
}

fn clean_eval(
    net: &Mlp<f32>,
    set: &HrtfSet,
    grid: &binaural_core::grid::DirectionGrid,
    bin: usize,
    _out_len: usize,
) -> (f64, f64) {
    let mut hits = 0usize;
    let mut err = 0.0;
    for h in 0..grid.len() {
        let (al, ar) = set.normalized_pair(h, bin);
        let pair = normalize_pair(al, ar, bin).unwrap();
        let i = ild(&pair).unwrap();
        let p = ipd(&pair).unwrap();
        let f = [i as f32, p[0] as f32, p[1] as f32, p[2] as f32, p[3] as f32];
        let buf = net.forward(&f);
        let am = argmax(&buf);
        if am == h {
            hits += 1;
        }
        err += angle_between(grid.get(am), grid.get(h));
    }
    (hits as f64 / grid.len() as f64, err / grid.len() as f64)
}
