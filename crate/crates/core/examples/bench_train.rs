use binaural_core::features::{ild, ipd, normalize_pair};
use binaural_core::grid::build_direction_grid;
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::ssde::{
    gaussian_target, synth_training_example, train, SsdeNet, TrainConfig, DEFAULT_SIGMA_RAD,
};
use std::time::Instant;

fn argmax(out: &[f64]) -> usize {
    out.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap()
        .0
}

fn clean_stats(set: &HrtfSet, net: &SsdeNet, bin: usize) -> (f64, f64) {
    let grid = set.grid();
    let mut hits = 0usize;
    let mut err_sum = 0.0;
    for h in 0..grid.len() {
        let (al, ar) = set.normalized_pair(h, bin);
        let pair = normalize_pair(al, ar, bin).unwrap();
        let i = ild(&pair).unwrap();
        let p = ipd(&pair).unwrap();
        let out = net.forward(&[i, p[0], p[1], p[2], p[3]]).unwrap();
        let am = argmax(&out);
        if am == h {
            hits += 1;
        }
        err_sum += binaural_core::grid::angle_between(grid.get(am), grid.get(h));
    }
    (hits as f64 / grid.len() as f64, err_sum / grid.len() as f64)
}

fn noisy_stats(
    set: &HrtfSet,
    net: &SsdeNet,
    bin: usize,
    snr: (f64, f64),
    n: usize,
) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = binaural_core::nn::SeededRng::seed_from_u64(0xABCD_EF01);
    let grid = set.grid();
    let mut hits = 0usize;
    let mut err_sum = 0.0;
    for _ in 0..n {
        let h = rng.gen_range(0..grid.len());
        let ex = synth_training_example(set, h, bin, snr, &mut rng).unwrap();
        let out = net.forward(&ex.feature.as_array()).unwrap();
        let am = argmax(&out);
        if am == h {
            hits += 1;
        }
        err_sum += binaural_core::grid::angle_between(grid.get(am), grid.get(h));
    }
    (hits as f64 / n as f64, err_sum / n as f64)
}

fn main() {
    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10);
    let bins: Vec<usize> = args
        .get(2)
        .map(|s| s.split(',').map(|b| b.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![233]);
    let snr_lo: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5.0);
    let snr_hi: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20.0);
    let step: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let t0 = Instant::now();
    let config = TrainConfig {
        bins: bins.clone(),
        epochs,
        seed: 1,
        snr_db: (snr_lo, snr_hi),
        step,
        ..TrainConfig::default()
    };
    let model = train(&set, &config).unwrap();
    let dt = t0.elapsed();
    println!("epochs {epochs} snr [{snr_lo},{snr_hi}] step {step} {dt:.2?}");

    let target_mean: f64 = {
        let mut sum = 0.0;
        let mut count = 0usize;
        for h in (0..grid.len()).step_by(13) {
            for v in gaussian_target(&grid, h, DEFAULT_SIGMA_RAD).unwrap() {
                sum += v;
                count += 1;
            }
        }
        sum / count as f64
    };
    println!("  target mean {target_mean:.4}");

    for &bin in &bins {
        let net = model.net_for_bin(bin);
        let (c1, cerr) = clean_stats(&set, net, bin);
        let (n1, nerr) = noisy_stats(&set, net, bin, (snr_lo, snr_hi), 1000);
        println!(
            "  bin {bin}: clean top1 {c1:.3} meanerr {cerr:.1}deg | noisy top1 {n1:.3} meanerr {nerr:.1}deg"
        );
    }
}
