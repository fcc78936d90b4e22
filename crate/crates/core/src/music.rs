//! Two-channel MUSIC direction estimator steered by HRTF pairs.
//!
//! Per frequency bin, the spatial correlation matrix of the left/right
//! spectra is averaged over frames and eigendecomposed in closed form.
//! With two channels the noise subspace is one-dimensional, so the MUSIC
//! pseudo-spectrum is 1/|a^H e2|^2 against the unit-normalized HRTF pair
//! a of every candidate direction. Bins are admitted by the ratio of the
//! two eigenvalues and admitted spectra are summed before the argmax.
//! Spatial smoothing is pointless at 2x2 and is not applied.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::hrtf::HrtfSet;
use crate::signal::{BinauralFrame, FRAME_LEN, SAMPLE_RATE};

/// Score assigned when a steering vector is numerically orthogonal to the
/// noise subspace; keeps sums over bins finite.
pub const SCORE_CAP: f64 = 1e24;

/// Eigenvalue ratio λ1/λ2 at or above which a bin counts as carrying a
/// directional source rather than isotropic noise.
pub const DEFAULT_EIGRATIO: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MusicError {
    #[error("spatial correlation needs at least 2 frames, got {got}")]
    TooFewFrames { got: usize },
    #[error("no frequency bin passed the eigenvalue-ratio test")]
    NoValidFrequency,
    #[error("bin {bin} out of range (1..{max})")]
    BinOutOfRange { bin: usize, max: usize },
}

/// Frame-averaged 2x2 spatial correlation of one frequency bin.
///
/// Hermitian by construction: only the diagonal (real) and the upper
/// off-diagonal element are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialCorrelation {
    /// E[|X_l|^2].
    pub ll: f64,
    /// E[X_l · conj(X_r)].
    pub lr: Complex64,
    /// E[|X_r|^2].
    pub rr: f64,
    /// Frames averaged over.
    pub frames: usize,
    /// Frequency bin the matrix belongs to.
    pub bin: usize,
}

/// Closed-form eigendecomposition of a 2x2 Hermitian matrix.
///
/// `values[0] >= values[1]`; `vectors[k]` is the unit eigenvector of
/// `values[k]` and the two are exactly orthonormal.
#[derive(Debug, Clone, Copy)]
pub struct Eig2 {
    pub values: [f64; 2],
    pub vectors: [[Complex64; 2]; 2],
}

/// Average x·x^H over frames at one bin, x = (X_l, X_r)^T.
pub fn spatial_correlation(
    frames: &[BinauralFrame],
    bin: usize,
) -> Result<SpatialCorrelation, MusicError> {
    if frames.len() < 2 {
        return Err(MusicError::TooFewFrames { got: frames.len() });
    }
    let half = frames[0].spectrum_left.len() / 2;
    if bin < 1 || bin >= half {
        return Err(MusicError::BinOutOfRange { bin, max: half });
    }
    let mut ll = 0.0;
    let mut rr = 0.0;
    let mut lr = Complex64::new(0.0, 0.0);
    for f in frames {
        let l = f.spectrum_left[bin];
        let r = f.spectrum_right[bin];
        ll += l.norm_sqr();
        rr += r.norm_sqr();
        lr += l * r.conj();
    }
    let m = frames.len() as f64;
    Ok(SpatialCorrelation {
        ll: ll / m,
        lr: lr / m,
        rr: rr / m,
        frames: frames.len(),
        bin,
    })
}

/// Eigendecompose a [`SpatialCorrelation`] matrix.
pub fn eig2(r: &SpatialCorrelation) -> Eig2 {
    let trace = r.ll + r.rr;
    let gap = ((r.ll - r.rr) * (r.ll - r.rr) + 4.0 * r.lr.norm_sqr()).sqrt();
    let l1 = 0.5 * (trace + gap);
    let l2 = 0.5 * (trace - gap);

    // (lr, λ1 − ll) solves (R − λ1)v = 0 unless the matrix is already
    // diagonal; e2 is the exact orthonormal complement of e1.
    let e1 = if r.lr.norm_sqr() > 0.0 {
        normalize2(r.lr, Complex64::new(l1 - r.ll, 0.0))
    } else if r.ll >= r.rr {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else {
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
    };
    let e2 = [-e1[1].conj(), e1[0].conj()];
    Eig2 {
        values: [l1, l2],
        vectors: [e1, e2],
    }
}

fn normalize2(a: Complex64, b: Complex64) -> [Complex64; 2] {
    let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if n == 0.0 {
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]
    } else {
        [a / n, b / n]
    }
}

/// MUSIC pseudo-spectrum of one bin over every grid direction.
///
/// `score(k) = 1 / |a_k^H · e2|^2` with a_k the unit-normalized HRTF pair
/// of direction k, capped at [`SCORE_CAP`].
pub fn music_spectrum(r: &SpatialCorrelation, steering: &HrtfSet) -> Vec<f64> {
    let e2 = eig2(r).vectors[1];
    let grid = steering.grid();
    (0..grid.len())
        .map(|k| {
            let (al, ar) = steering.normalized_pair(k, r.bin);
            let proj = al.conj() * e2[0] + ar.conj() * e2[1];
            let denom = proj.norm_sqr();
            if denom < 1e-24 {
                SCORE_CAP
            } else {
                (1.0 / denom).min(SCORE_CAP)
            }
        })
        .collect()
}

/// Keep the bins whose eigenvalue ratio λ1/λ2 reaches `threshold`.
///
/// A zero (or negative, from rounding) λ2 counts as an infinite ratio, so
/// exactly rank-1 bins are always kept.
pub fn select_bins_by_eigratio(
    correlations: &[SpatialCorrelation],
    threshold: f64,
) -> Vec<usize> {
    correlations
        .iter()
        .filter(|r| {
            let v = eig2(r).values;
            v[1] <= 0.0 || v[0] / v[1] >= threshold
        })
        .map(|r| r.bin)
        .collect()
}

/// Every bin between 100 Hz and 12 kHz, the band the estimators share.
pub fn candidate_bins() -> Vec<usize> {
    let hz_per_bin = SAMPLE_RATE as f64 / FRAME_LEN as f64;
    let first = (100.0 / hz_per_bin).ceil() as usize;
    let last = (12_000.0 / hz_per_bin).floor() as usize;
    (first..=last).collect()
}

/// Localize by summing per-bin MUSIC spectra over the admitted bins.
///
/// Returns the argmax direction id (lowest id wins ties) and the summed
/// spectrum. Bins are admitted by [`select_bins_by_eigratio`] with
/// `threshold`; an empty admission set is an error.
pub fn music_estimate(
    frames: &[BinauralFrame],
    steering: &HrtfSet,
    bins: &[usize],
    threshold: f64,
) -> Result<(usize, Vec<f64>), MusicError> {
    if frames.len() < 2 {
        return Err(MusicError::TooFewFrames { got: frames.len() });
    }
    let correlations: Vec<SpatialCorrelation> = bins
        .iter()
        .map(|&b| spatial_correlation(frames, b))
        .collect::<Result<_, _>>()?;
    let selected = select_bins_by_eigratio(&correlations, threshold);
    if selected.is_empty() {
        return Err(MusicError::NoValidFrequency);
    }
    let grid_len = steering.grid().len();
    let mut sum = vec![0.0; grid_len];
    for r in correlations
        .iter()
        .filter(|r| selected.binary_search(&r.bin).is_ok())
    {
        for (acc, s) in sum.iter_mut().zip(music_spectrum(r, steering)) {
            *acc += s;
        }
    }
    let mut best = 0;
    for (k, &v) in sum.iter().enumerate() {
        if v > sum[best] {
            best = k;
        }
    }
    Ok((best, sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{angle_between, build_direction_grid};
    use crate::hrtf::{HeadModel, HrtfSet};
    use crate::nn::SeededRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn zero_spectrum() -> Vec<Complex64> {
        vec![c(0.0, 0.0); FRAME_LEN]
    }

    /// Frames whose bin `bin` holds `a · s_m` for per-frame coefficients s.
    fn frames_with_bin(
        bin: usize,
        a: (Complex64, Complex64),
        coeffs: &[Complex64],
    ) -> Vec<BinauralFrame> {
        coeffs
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut l = zero_spectrum();
                let mut r = zero_spectrum();
                l[bin] = a.0 * s;
                r[bin] = a.1 * s;
                BinauralFrame::new(l, r, i, SAMPLE_RATE)
            })
            .collect()
    }

    fn test_set() -> HrtfSet {
        HrtfSet::synthesize(&build_direction_grid(), HeadModel::default())
    }

    #[test]
    fn identical_channels_give_rank_one_ones_matrix() {
        let coeffs: Vec<Complex64> = (0..8)
            .map(|i| Complex64::from_polar(1.0, i as f64))
            .collect();
        let frames = frames_with_bin(50, (c(1.0, 0.0), c(1.0, 0.0)), &coeffs);
        let r = spatial_correlation(&frames, 50).unwrap();
        assert!((r.ll - r.rr).abs() < 1e-12);
        assert!((r.lr - c(r.ll, 0.0)).norm() < 1e-12);
        let e = eig2(&r);
        assert!(e.values[1].abs() < 1e-12 * e.values[0]);
    }

    #[test]
    fn independent_noise_off_diagonal_vanishes() {
        let mut rng = SeededRng::seed_from_u64(11);
        let mut frames = Vec::new();
        for i in 0..10_000 {
            let mut l = zero_spectrum();
            let mut r = zero_spectrum();
            l[30] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            r[30] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            frames.push(BinauralFrame::new(l, r, i, SAMPLE_RATE));
        }
        let r = spatial_correlation(&frames, 30).unwrap();
        assert!(r.lr.norm() / r.ll < 0.05);
    }

    #[test]
    fn rank_one_eigenvector_matches_steering() {
        let a = (c(0.6, 0.2), c(-0.3, 0.7));
        let coeffs: Vec<Complex64> = (0..16)
            .map(|i| Complex64::from_polar(1.0 + i as f64 * 0.1, i as f64 * 0.7))
            .collect();
        let frames = frames_with_bin(80, a, &coeffs);
        let r = spatial_correlation(&frames, 80).unwrap();
        let e = eig2(&r);
        // e1 parallel to a: |<e1, a>|^2 == |a|^2.
        let inner = e.vectors[0][0].conj() * a.0 + e.vectors[0][1].conj() * a.1;
        let norm_a = a.0.norm_sqr() + a.1.norm_sqr();
        assert!((inner.norm_sqr() - norm_a).abs() < 1e-10);
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let id = SpatialCorrelation {
            ll: 1.0,
            lr: c(0.0, 0.0),
            rr: 1.0,
            frames: 2,
            bin: 1,
        };
        let e = eig2(&id);
        assert_eq!(e.values, [1.0, 1.0]);

        let diag = SpatialCorrelation {
            ll: 2.0,
            lr: c(0.0, 0.0),
            rr: 1.0,
            frames: 2,
            bin: 1,
        };
        let e = eig2(&diag);
        assert_eq!(e.values, [2.0, 1.0]);
        assert_eq!(e.vectors[0], [c(1.0, 0.0), c(0.0, 0.0)]);
    }

    proptest! {
        #[test]
        fn eig_residual_small_on_random_hermitian(
            ll in 0.0f64..10.0,
            rr in 0.0f64..10.0,
            re in -5.0f64..5.0,
            im in -5.0f64..5.0,
        ) {
            let r = SpatialCorrelation { ll, lr: c(re, im), rr, frames: 2, bin: 1 };
            let e = eig2(&r);
            for k in 0..2 {
                let v = e.vectors[k];
                let rv = [
                    c(r.ll, 0.0) * v[0] + r.lr * v[1],
                    r.lr.conj() * v[0] + c(r.rr, 0.0) * v[1],
                ];
                let res = ((rv[0] - v[0] * e.values[k]).norm_sqr()
                    + (rv[1] - v[1] * e.values[k]).norm_sqr())
                .sqrt();
                prop_assert!(res < 1e-10, "residual {res} for eigenpair {k}");
            }
            let ortho = e.vectors[0][0].conj() * e.vectors[1][0]
                + e.vectors[0][1].conj() * e.vectors[1][1];
            prop_assert!(ortho.norm() < 1e-12);
        }

        #[test]
        fn spectrum_invariant_to_positive_scaling(scale in 0.001f64..1000.0) {
            let set = test_set();
            let r = SpatialCorrelation {
                ll: 1.3, lr: c(0.4, -0.2), rr: 0.8, frames: 4, bin: 120,
            };
            let scaled = SpatialCorrelation {
                ll: r.ll * scale, lr: r.lr * scale, rr: r.rr * scale, ..r
            };
            let a = music_spectrum(&r, &set);
            let b = music_spectrum(&scaled, &set);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn noise_free_source_peaks_at_or_parallel_to_truth() {
        let set = test_set();
        let grid = set.grid();
        let bin = 233;
        for &k in &[0usize, 57, 160, 325] {
            let a = set.normalized_pair(k, bin);
            let coeffs: Vec<Complex64> = (0..8)
                .map(|i| Complex64::from_polar(1.0, 0.9 * i as f64))
                .collect();
            let frames = frames_with_bin(bin, a, &coeffs);
            let r = spatial_correlation(&frames, bin).unwrap();
            let scores = music_spectrum(&r, &set);
            let best = scores
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0;
            // The peak must score at least as high as the true direction;
            // a tie through parallel steering vectors is acceptable.
            assert!(scores[best] >= scores[k]);
            assert!(
                scores[k] > 1e6,
                "true direction barely scores: {}",
                scores[k]
            );
            let _ = grid;
        }
    }

    #[test]
    fn pure_noise_identity_scores_finite() {
        let set = test_set();
        let r = SpatialCorrelation {
            ll: 1.0,
            lr: c(0.0, 0.0),
            rr: 1.0,
            frames: 16,
            bin: 100,
        };
        for s in music_spectrum(&r, &set) {
            assert!(s.is_finite() && s >= 0.0);
        }
    }

    #[test]
    fn eigratio_selects_rank_one_rejects_isotropic() {
        let rank1 = SpatialCorrelation {
            ll: 1.0,
            lr: c(1.0, 0.0),
            rr: 1.0,
            frames: 4,
            bin: 7,
        };
        let noise = SpatialCorrelation {
            ll: 1.0,
            lr: c(0.01, 0.0),
            rr: 0.98,
            frames: 4,
            bin: 8,
        };
        let picked = select_bins_by_eigratio(&[rank1, noise], DEFAULT_EIGRATIO);
        assert_eq!(picked, vec![7]);
    }

    #[test]
    fn estimate_on_clean_wideband_source_hits_truth_or_alias() {
        let set = test_set();
        let grid = set.grid();
        let truth = 42;
        let mut rng = SeededRng::seed_from_u64(3);
        let bins = candidate_bins();
        let mut frames = Vec::new();
        for i in 0..8 {
            let mut l = zero_spectrum();
            let mut r = zero_spectrum();
            for &b in &bins {
                let (al, ar) = set.normalized_pair(truth, b);
                let s = Complex64::from_polar(1.0, rng.gen::<f64>() * std::f64::consts::TAU);
                l[b] = al * s;
                r[b] = ar * s;
            }
            frames.push(BinauralFrame::new(l, r, i, SAMPLE_RATE));
        }
        let (best, spectrum) = music_estimate(&frames, &set, &bins, DEFAULT_EIGRATIO).unwrap();
        assert_eq!(spectrum.len(), grid.len());
        let err = angle_between(grid.get(best), grid.get(truth));
        let alias = angle_between(
            grid.get(best),
            &grid.get(truth).mirror_front_back(),
        );
        assert!(
            err < 12.0 || alias < 12.0,
            "estimate {best} is {err:.1} deg from truth, {alias:.1} from alias"
        );
    }

    #[test]
    fn too_few_frames_and_empty_selection_error() {
        let set = test_set();
        let bins = candidate_bins();
        assert!(matches!(
            music_estimate(&[], &set, &bins, DEFAULT_EIGRATIO),
            Err(MusicError::TooFewFrames { got: 0 })
        ));

        // Isotropic per-channel noise in every bin: no bin passes.
        let mut rng = SeededRng::seed_from_u64(5);
        let mut frames = Vec::new();
        for i in 0..400 {
            let mut l = zero_spectrum();
            let mut r = zero_spectrum();
            for &b in &bins {
                l[b] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                r[b] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            frames.push(BinauralFrame::new(l, r, i, SAMPLE_RATE));
        }
        match music_estimate(&frames, &set, &bins, 1e6) {
            Err(MusicError::NoValidFrequency) => {}
            other => panic!("expected NoValidFrequency, got {other:?}"),
        }
    }
}
