use binaural_core::features::{ild, ipd, normalize_pair};
use binaural_core::grid::{angle_between, build_direction_grid};
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::nn::SeededRng;
use binaural_core::ssde::synth_training_example;
use rand::{Rng, SeedableRng};

fn invariant(f: &[f64; 5]) -> [f64; 3] {
    let (i, l_re, l_im, r_re, r_im) = (f[0], f[1], f[2], f[3], f[4]);
    [i, l_re * r_re + l_im * r_im, l_im * r_re - l_re * r_im]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bins: Vec<usize> = args
        .get(1)
        .map(|s| s.split(',').map(|b| b.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![233]);
    let snr_lo: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200.0);
    let snr_hi: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200.0);
    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    for &bin in &bins {
        let mut rng = SeededRng::seed_from_u64(7 + bin as u64);
        let mut train: Vec<(usize, [f64; 3])> = Vec::new();
        for _ in 0..1000 {
            let h = rng.gen_range(0..grid.len());
            let ex = synth_training_example(&set, h, bin, (snr_lo, snr_hi), &mut rng).unwrap();
            train.push((h, invariant(&ex.feature.as_array())));
        }
        let mut hits = 0usize;
        let mut err = 0.0;
        for h in 0..grid.len() {
            let (al, ar) = set.normalized_pair(h, bin);
            let pair = normalize_pair(al, ar, bin).unwrap();
            let i = ild(&pair).unwrap();
            let p = ipd(&pair).unwrap();
            let q = invariant(&[i, p[0], p[1], p[2], p[3]]);
            let best = train
                .iter()
                .min_by(|a, b| {
                    let da: f64 = (0..3).map(|k| (a.1[k] - q[k]).powi(2)).sum();
                    let db: f64 = (0..3).map(|k| (b.1[k] - q[k]).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if best.0 == h {
                hits += 1;
            }
            err += angle_between(grid.get(best.0), grid.get(h));
        }
        println!(
            "bin {bin} snr [{snr_lo},{snr_hi}]: 1nn top1 {:.3} meanerr {:.1}deg",
            hits as f64 / grid.len() as f64,
            err / grid.len() as f64
        );
    }
}
