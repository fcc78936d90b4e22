use binaural_core::features::{ild, ipd, normalize_pair};
use binaural_core::grid::{angle_between, build_direction_grid, Direction};
use binaural_core::hrtf::{HeadModel, HrtfSet};
use binaural_core::nn::SeededRng;
use binaural_core::ssde::{example_with, trained_bins};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use std::time::Instant;

const FRAMES: usize = 29;

fn invariant(f: &[f64; 5]) -> [f64; 3] {
    let (i, p) = (f[0], &f[1..]);
    let cosd = p[0] * p[2] + p[1] * p[3];
    let sind = p[1] * p[2] - p[0] * p[3];
    [i, cosd, sind]
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let snr_db: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(15.0);
    let stride: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let taus: Vec<f64> = vec![0.05, 0.1, 0.2, 0.4, 0.8];

    let grid = build_direction_grid();
    let set = HrtfSet::synthesize(&grid, HeadModel::default());
    let bins: Vec<usize> = trained_bins().into_iter().step_by(stride).collect();
    eprintln!("{} bins, snr {snr_db} dB", bins.len());

    let t0 = Instant::now();
    let protos: Vec<Vec<[f64; 3]>> = bins
        .iter()
        .map(|&bin| {
            (0..grid.len())
                .map(|h| {
                    let (al, ar) = set.normalized_pair(h, bin);
                    let pair = normalize_pair(al, ar, bin).unwrap();
                    let i = ild(&pair).unwrap();
                    let p = ipd(&pair).unwrap();
                    invariant(&[i, p[0], p[1], p[2], p[3]])
                })
                .collect()
        })
        .collect();
    eprintln!("prototypes built ({:.0?})", t0.elapsed());

    let scale = 10f64.powf(-snr_db / 20.0) / 2.0;
    let n_tau = taus.len();
    let mut err = vec![0.0f64; n_tau + 1];
    let mut mirror = vec![0.0f64; n_tau + 1];
    let mut hits = vec![0usize; n_tau + 1];
    let mut lr = vec![(0usize, 0usize); n_tau + 1];
    let mut tb = vec![(0usize, 0usize); n_tau + 1];
    let mut rng = SeededRng::seed_from_u64(0xBEEF);
    for h in 0..grid.len() {
        let mut scores = vec![vec![0.0f64; grid.len()]; n_tau + 1];
        for (bi, &bin) in bins.iter().enumerate() {
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
                let ex = match example_with(&set, h, bin, s, nl, nr) {
                    Ok(e) => e,
                    Err(_) => continue,
                };
                let q = invariant(&ex.feature.as_array());
                let mut best = (0usize, f64::INFINITY);
                for (k, p) in protos[bi].iter().enumerate() {
                    let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
                    if d2 < best.1 {
                        best = (k, d2);
                    }
                    for (ti, &tau) in taus.iter().enumerate() {
                        scores[ti][k] += (-d2 / (2.0 * tau * tau)).exp();
                    }
                }
                scores[n_tau][best.0] += 1.0;
            }
        }
        for ti in 0..=n_tau {
            let am = scores[ti]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            let truth = grid.get(h);
            let est = grid.get(am);
            let e = angle_between(est, truth);
            let m = angle_between(est, &truth.mirror_front_back());
            err[ti] += e;
            mirror[ti] += e.min(m);
            if am == h {
                hits[ti] += 1;
            }
            tally(truth, est, &mut lr[ti], &mut tb[ti]);
        }
    }
    let d = grid.len() as f64;
    for ti in 0..=n_tau {
        let name = if ti < n_tau {
            format!("tau {:.2}", taus[ti])
        } else {
            "vote   ".into()
        };
        println!(
            "{name}: mean {:6.1}deg mirror {:6.1}deg top1 {:.3} LR {:.2} ({}/{}) TB {:.2} ({}/{})",
            err[ti] / d,
            mirror[ti] / d,
            hits[ti] as f64 / d,
            lr[ti].0 as f64 / lr[ti].1.max(1) as f64,
            lr[ti].0,
            lr[ti].1,
            tb[ti].0 as f64 / tb[ti].1.max(1) as f64,
            tb[ti].0,
            tb[ti].1,
        );
    }
    eprintln!("done ({:.0?})", t0.elapsed());
}

fn tally(truth: &Direction, est: &Direction, lr: &mut (usize, usize), tb: &mut (usize, usize)) {
    let el = truth.elevation_deg().abs();
    let az = truth.azimuth_deg().abs();
    let median_dist = truth.y.abs().clamp(-1.0, 1.0).asin().to_degrees();
    if el < 6.0 && median_dist >= 6.0 {
        lr.1 += 1;
        if est.y.signum() == truth.y.signum() {
            lr.0 += 1;
        }
    }
    if (az < 6.0 || (180.0 - az) < 6.0) && el >= 6.0 {
        tb.1 += 1;
        if est.z.signum() == truth.z.signum() {
            tb.0 += 1;
        }
    }
}
