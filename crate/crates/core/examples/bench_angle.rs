use binaural_core::features::{ild, ipd, normalize_pair};
use binaural_core::grid::{angle_between, build_direction_grid};
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::ssde::{train, TrainConfig};
use std::time::Instant;

fn main() {
    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(10);
    let step: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let bins: Vec<usize> = binaural_core::ssde::trained_bins()
        .into_iter()
        .step_by(step)
        .collect();
    let t0 = Instant::now();
    let config = TrainConfig {
        bins: bins.clone(),
        epochs,
        seed: 1,
        ..TrainConfig::default()
    };
    let model = train(&set, &config).unwrap();
    let dt = t0.elapsed();

    // Clean aggregate over all trained bins: existence maps from the raw
    // normalized HRTF features per bin, summed, argmax vs truth.
    let mut err_sum = 0.0;
    let mut per_bin_err = vec![0.0f64; bins.len()];
    for h in 0..grid.len() {
        let mut scores = vec![0.0f64; grid.len()];
        for (bi, &bin) in bins.iter().enumerate() {
            let (al, ar) = set.normalized_pair(h, bin);
            let pair = normalize_pair(al, ar, bin).unwrap();
            let i = ild(&pair).unwrap();
            let p = ipd(&pair).unwrap();
            let out = model
                .net_for_bin(bin)
                .forward(&[i, p[0], p[1], p[2], p[3]])
                .unwrap();
            let am = out
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            per_bin_err[bi] += angle_between(grid.get(h), grid.get(am)) / grid.len() as f64;
            for (s, v) in scores.iter_mut().zip(out) {
                *s += v;
            }
        }
        let est = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        err_sum += angle_between(grid.get(h), grid.get(est));
    }
    println!(
        "epochs {epochs}, {} bins, {dt:.1?}: aggregate clean mean err {:.1} deg",
        bins.len(),
        err_sum / grid.len() as f64
    );
    let mean_bin = per_bin_err.iter().sum::<f64>() / bins.len() as f64;
    println!("  per-bin argmax mean err (avg over bins): {mean_bin:.1} deg");
}
