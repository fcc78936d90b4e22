//! Parametric head-related transfer functions on the direction grid.
//!
//! The set is synthesized from a rigid-sphere head model rather than
//! measured: per ear the response combines (a) an arrival-time term whose
//! interaural difference reduces to the Woodworth rigid-sphere delay
//! (a/c)(γ + sin γ), (b) a first-order head-shadow filter that darkens the
//! far ear more at higher frequencies, and (c) a pinna notch (depth 15 dB,
//! Q 5) whose center frequency rises with elevation from 6 kHz to 10 kHz.
//!
//! The notch center is additionally offset between the ears by
//! Δ = (200 + 150·x)·tanh(8·y) Hz (x front-back, y lateral coordinate),
//! +Δ on the left ear and −Δ on the right. The offset is odd in y, so the
//! model is exactly left-right mirror symmetric and has zero interaural
//! differences straight ahead, while off the median plane it tags elevation
//! and weakly tags front vs back in the interaural spectrum. On the median
//! plane itself front-back (and up-down) remain ambiguous, which is the
//! expected confusion behavior for this kind of estimator.
//!
//! Sets are persisted in a small binary container and can hold externally
//! measured data in place of the synthetic model, as long as the direction
//! grid matches.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::container::{is_eof, read_f64, read_magic4, read_u32, read_u64};
use crate::grid::{build_direction_grid, Direction, DirectionGrid};
use crate::signal::{FRAME_LEN, SAMPLE_RATE};

/// Bins per direction stored in a set (0 .. N/2).
pub const HALF_LEN: usize = FRAME_LEN / 2;

const MAGIC: &[u8; 4] = b"HRTF";
const VERSION: u32 = 1;
const PARAM_COUNT: usize = 10;

#[derive(Debug, Error)]
pub enum HrtfError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not an HRTF container)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("container grid hash {file:#018x} does not match the current grid {current:#018x}")]
    GridMismatch { file: u64, current: u64 },
    #[error("container header field {field} has unexpected value {value}")]
    BadHeader { field: &'static str, value: u64 },
    #[error("container truncated")]
    Truncated,
    #[error("bin {bin} outside stored range [0, {HALF_LEN})")]
    BinOutOfRange { bin: usize },
    #[error("zero HRTF magnitude at direction {dir}, bin {bin}")]
    ZeroMagnitude { dir: usize, bin: usize },
}

/// Parameters of the synthetic head model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadModel {
    /// Sphere radius in meters.
    pub head_radius_m: f64,
    /// Speed of sound in m/s.
    pub speed_of_sound: f64,
    /// Ear placement azimuth in degrees (left at +, right at −).
    pub ear_azimuth_deg: f64,
    /// Pinna notch depth in dB.
    pub notch_depth_db: f64,
    /// Pinna notch quality factor.
    pub notch_q: f64,
    /// Notch center at elevation −90°, in Hz.
    pub notch_base_hz: f64,
    /// Notch center rise from elevation −90° to +90°, in Hz.
    pub notch_span_hz: f64,
    /// Interaural notch offset scale, in Hz.
    pub notch_offset_hz: f64,
    /// Front-back modulation of the interaural notch offset, in Hz.
    pub notch_offset_front_hz: f64,
    /// Slope of the lateral saturation tanh(slope·y).
    pub notch_lateral_slope: f64,
}

impl Default for HeadModel {
    fn default() -> Self {
        Self {
            head_radius_m: 0.0875,
            speed_of_sound: 343.0,
            ear_azimuth_deg: 90.0,
            notch_depth_db: 15.0,
            notch_q: 5.0,
            notch_base_hz: 6000.0,
            notch_span_hz: 4000.0,
            notch_offset_hz: 200.0,
            notch_offset_front_hz: 150.0,
            notch_lateral_slope: 8.0,
        }
    }
}

impl HeadModel {
    fn to_array(self) -> [f64; PARAM_COUNT] {
        [
            self.head_radius_m,
            self.speed_of_sound,
            self.ear_azimuth_deg,
            self.notch_depth_db,
            self.notch_q,
            self.notch_base_hz,
            self.notch_span_hz,
            self.notch_offset_hz,
            self.notch_offset_front_hz,
            self.notch_lateral_slope,
        ]
    }

    fn from_array(a: [f64; PARAM_COUNT]) -> Self {
        Self {
            head_radius_m: a[0],
            speed_of_sound: a[1],
            ear_azimuth_deg: a[2],
            notch_depth_db: a[3],
            notch_q: a[4],
            notch_base_hz: a[5],
            notch_span_hz: a[6],
            notch_offset_hz: a[7],
            notch_offset_front_hz: a[8],
            notch_lateral_slope: a[9],
        }
    }
}

/// Arrival-time term for one ear. γ is the angle between the source
/// direction and that ear's axis; the shadowed side takes the creeping
/// path around the sphere. The interaural difference equals the Woodworth
/// delay (a/c)(γ + sin γ) in the horizontal plane.
fn ear_delay(cos_gamma: f64, gamma: f64, radius: f64, c: f64) -> f64 {
    if gamma < std::f64::consts::FRAC_PI_2 {
        -(radius / c) * cos_gamma
    } else {
        (radius / c) * (gamma - std::f64::consts::FRAC_PI_2)
    }
}

/// First-order head-shadow response: unity at DC, gain α(γ) in the limit,
/// with α running from 2 at the near ear to about 0.1 in the deepest shadow.
fn ear_shadow(f_hz: f64, gamma: f64, radius: f64, c: f64) -> Complex64 {
    let alpha = 1.05 + 0.95 * (1.2 * gamma).cos();
    let f_pole = c / (std::f64::consts::PI * radius);
    let r = f_hz / f_pole;
    Complex64::new(1.0, alpha * r) / Complex64::new(1.0, r)
}

/// Parametric band-stop response with depth g at fc; phase swings through
/// the stop band, so the notch is visible in phase as well as magnitude.
fn notch_response(f_hz: f64, fc: f64, depth_db: f64, q: f64) -> Complex64 {
    let g = 10f64.powf(-depth_db / 20.0);
    let diff = fc * fc - f_hz * f_hz;
    let band = f_hz * fc / q;
    Complex64::new(diff, g * band) / Complex64::new(diff, band)
}

/// Interaural notch offset; exactly odd in the lateral coordinate.
fn notch_offset(d: &Direction, m: &HeadModel) -> f64 {
    let t = (m.notch_lateral_slope * d.y.abs()).tanh();
    let signed = if d.y < 0.0 { -t } else { t };
    (m.notch_offset_hz + m.notch_offset_front_hz * d.x) * signed
}

fn ear_response(d: &Direction, f_hz: f64, m: &HeadModel, left: bool) -> Complex64 {
    let az = m.ear_azimuth_deg.to_radians();
    let (cx, sy) = (az.cos(), az.sin());
    let cos_gamma = if left {
        (cx * d.x + sy * d.y).clamp(-1.0, 1.0)
    } else {
        (cx * d.x - sy * d.y).clamp(-1.0, 1.0)
    };
    let gamma = cos_gamma.acos();

    let tau = ear_delay(cos_gamma, gamma, m.head_radius_m, m.speed_of_sound);
    let phase = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f_hz * tau);

    let shadow = ear_shadow(f_hz, gamma, m.head_radius_m, m.speed_of_sound);

    let base = m.notch_base_hz + m.notch_span_hz * (d.elevation_deg() + 90.0) / 180.0;
    let delta = notch_offset(d, m);
    let fc = if left { base + delta } else { base - delta };
    let notch = notch_response(f_hz, fc, m.notch_depth_db, m.notch_q);

    shadow * notch * phase
}

/// Synthetic HRTF pair for one direction and bin (bin · 44100/2048 Hz).
///
/// Bins 0..N/2 are accepted; DC comes out as unity gain on both ears.
pub fn sphere_hrtf(d: &Direction, bin: usize, params: &HeadModel) -> (Complex64, Complex64) {
    let f_hz = bin as f64 * SAMPLE_RATE as f64 / FRAME_LEN as f64;
    (
        ear_response(d, f_hz, params, true),
        ear_response(d, f_hz, params, false),
    )
}

/// Immutable HRTF set over the canonical grid: one complex pair per
/// (direction, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct HrtfSet {
    grid: DirectionGrid,
    params: HeadModel,
    /// Direction-major: data[dir * HALF_LEN + bin] = [A_l, A_r].
    data: Vec<[Complex64; 2]>,
}

impl HrtfSet {
    /// Evaluate the head model over the whole grid.
    pub fn synthesize(grid: &DirectionGrid, params: HeadModel) -> Self {
        let mut data = Vec::with_capacity(grid.len() * HALF_LEN);
        for d in grid.directions() {
            for bin in 0..HALF_LEN {
                let (l, r) = sphere_hrtf(d, bin, &params);
                data.push([l, r]);
            }
        }
        Self {
            grid: grid.clone(),
            params,
            data,
        }
    }

    pub fn grid(&self) -> &DirectionGrid {
        &self.grid
    }

    pub fn params(&self) -> &HeadModel {
        &self.params
    }

    /// Raw pair (A_l, A_r) for a direction id and bin.
    pub fn pair(&self, dir: usize, bin: usize) -> (Complex64, Complex64) {
        let e = &self.data[dir * HALF_LEN + bin];
        (e[0], e[1])
    }

    /// Pair scaled to unit joint energy, Â = A/√(|A_l|²+|A_r|²); this is the
    /// form used as steering vector and in training synthesis.
    pub fn normalized_pair(&self, dir: usize, bin: usize) -> (Complex64, Complex64) {
        let (l, r) = self.pair(dir, bin);
        let scale = (l.norm_sqr() + r.norm_sqr()).sqrt();
        (l / scale, r / scale)
    }

    /// Per-direction interaural level difference ln|A_l| − ln|A_r| at a bin.
    pub fn ild_map(&self, bin: usize) -> Result<Vec<f64>, HrtfError> {
        if bin >= HALF_LEN {
            return Err(HrtfError::BinOutOfRange { bin });
        }
        (0..self.grid.len())
            .map(|dir| {
                let (l, r) = self.pair(dir, bin);
                let (ml, mr) = (l.norm(), r.norm());
                if ml == 0.0 || mr == 0.0 {
                    return Err(HrtfError::ZeroMagnitude { dir, bin });
                }
                Ok(ml.ln() - mr.ln())
            })
            .collect()
    }

    /// Per-direction interaural phase difference arg(A_l/A_r) ∈ (−π, π].
    pub fn ipd_map(&self, bin: usize) -> Result<Vec<f64>, HrtfError> {
        if bin >= HALF_LEN {
            return Err(HrtfError::BinOutOfRange { bin });
        }
        (0..self.grid.len())
            .map(|dir| {
                let (l, r) = self.pair(dir, bin);
                if l.norm() == 0.0 || r.norm() == 0.0 {
                    return Err(HrtfError::ZeroMagnitude { dir, bin });
                }
                Ok((l / r).arg())
            })
            .collect()
    }

    /// Write the container: header, then per direction and bin the four
    /// little-endian f64 values re_l, im_l, re_r, im_r.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HrtfError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.len() as u32).to_le_bytes())?;
        w.write_all(&(FRAME_LEN as u32).to_le_bytes())?;
        w.write_all(&self.grid.hash_u64().to_le_bytes())?;
        w.write_all(&SAMPLE_RATE.to_le_bytes())?;
        w.write_all(&(PARAM_COUNT as u32).to_le_bytes())?;
        for p in self.params.to_array() {
            w.write_all(&p.to_le_bytes())?;
        }
        for e in &self.data {
            for c in e {
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Read a container and check it against the current grid.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HrtfError> {
        let mut r = BufReader::new(File::open(path)?);
        let rd = |e: std::io::Error| {
            if is_eof(&e) {
                HrtfError::Truncated
            } else {
                HrtfError::Io(e)
            }
        };
        let magic = read_magic4(&mut r).map_err(rd)?;
        if &magic != MAGIC {
            return Err(HrtfError::BadMagic);
        }
        let version = read_u32(&mut r).map_err(rd)?;
        if version != VERSION {
            return Err(HrtfError::BadVersion(version));
        }
        let d_count = read_u32(&mut r).map_err(rd)? as usize;
        let n_fft = read_u32(&mut r).map_err(rd)? as usize;
        let file_hash = read_u64(&mut r).map_err(rd)?;
        let rate = read_u32(&mut r).map_err(rd)?;
        let param_count = read_u32(&mut r).map_err(rd)? as usize;

        let grid = build_direction_grid();
        if file_hash != grid.hash_u64() {
            return Err(HrtfError::GridMismatch {
                file: file_hash,
                current: grid.hash_u64(),
            });
        }
        if d_count != grid.len() {
            return Err(HrtfError::BadHeader {
                field: "direction count",
                value: d_count as u64,
            });
        }
        if n_fft != FRAME_LEN {
            return Err(HrtfError::BadHeader {
                field: "fft length",
                value: n_fft as u64,
            });
        }
        if rate != SAMPLE_RATE {
            return Err(HrtfError::BadHeader {
                field: "sample rate",
                value: rate as u64,
            });
        }
        if param_count != PARAM_COUNT {
            return Err(HrtfError::BadHeader {
                field: "param count",
                value: param_count as u64,
            });
        }
        let mut params = [0f64; PARAM_COUNT];
        for p in params.iter_mut() {
            *p = read_f64(&mut r).map_err(rd)?;
        }
        let mut data = Vec::with_capacity(d_count * HALF_LEN);
        for _ in 0..d_count * HALF_LEN {
            let re_l = read_f64(&mut r).map_err(rd)?;
            let im_l = read_f64(&mut r).map_err(rd)?;
            let re_r = read_f64(&mut r).map_err(rd)?;
            let im_r = read_f64(&mut r).map_err(rd)?;
            data.push([Complex64::new(re_l, im_l), Complex64::new(re_r, im_r)]);
        }
        Ok(Self {
            grid,
            params: HeadModel::from_array(params),
            data,
        })
    }
}

/// CSV dump: direction_id, azimuth, elevation, bin, re_l, im_l, re_r, im_r.
pub fn export_hrtf_csv<W: Write>(set: &HrtfSet, mut out: W) -> io::Result<()> {
    writeln!(out, "direction_id,azimuth_deg,elevation_deg,bin,re_l,im_l,re_r,im_r")?;
    for (dir, d) in set.grid.directions().iter().enumerate() {
        for bin in 0..HALF_LEN {
            let (l, r) = set.pair(dir, bin);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                dir,
                d.azimuth_deg(),
                d.elevation_deg(),
                bin,
                l.re,
                l.im,
                r.re,
                r.im
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bin_for_hz(hz: f64) -> usize {
        (hz * FRAME_LEN as f64 / SAMPLE_RATE as f64).round() as usize
    }

    #[test]
    fn front_has_identical_ears_every_bin() {
        let m = HeadModel::default();
        let front = Direction::front();
        for bin in 0..HALF_LEN {
            let (l, r) = sphere_hrtf(&front, bin, &m);
            assert_eq!(l, r, "bin {bin}");
        }
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let m = HeadModel::default();
        let grid = build_direction_grid();
        for (i, d) in grid.directions().iter().enumerate().step_by(7) {
            let md = d.mirror_left_right();
            for bin in [1, 14, 100, 372, 465, 900, 1023] {
                let (l, _) = sphere_hrtf(d, bin, &m);
                let (_, r_mirror) = sphere_hrtf(&md, bin, &m);
                assert_eq!(l, r_mirror, "direction {i}, bin {bin}");
            }
        }
    }

    #[test]
    fn left_ninety_low_bin_has_positive_ipd_and_small_ild() {
        let m = HeadModel::default();
        let left90 = Direction::from_degrees(90.0, 0.0);
        let low = bin_for_hz(300.0);
        let high = bin_for_hz(8000.0);
        let (ll, lr) = sphere_hrtf(&left90, low, &m);
        let ipd_low = (ll / lr).arg();
        let ild_low = ll.norm().ln() - lr.norm().ln();
        let (hl, hr) = sphere_hrtf(&left90, high, &m);
        let ild_high = hl.norm().ln() - hr.norm().ln();
        assert!(ipd_low > 0.0, "IPD at 300 Hz = {ipd_low}");
        assert!(
            ild_low.abs() < ild_high.abs(),
            "|ILD| at 300 Hz ({ild_low:.3}) should be below |ILD| at 8 kHz ({ild_high:.3})"
        );
    }

    #[test]
    fn interaural_delay_matches_woodworth_in_horizontal_plane() {
        let m = HeadModel::default();
        let a_over_c = m.head_radius_m / m.speed_of_sound;
        for az_deg in [10.0f64, 30.0, 60.0, 90.0] {
            let d = Direction::from_degrees(az_deg, 0.0);
            let az = m.ear_azimuth_deg.to_radians();
            let (cx, sy) = (az.cos(), az.sin());
            let cos_l = (cx * d.x + sy * d.y).clamp(-1.0, 1.0);
            let cos_r = (cx * d.x - sy * d.y).clamp(-1.0, 1.0);
            let tau_l = ear_delay(cos_l, cos_l.acos(), m.head_radius_m, m.speed_of_sound);
            let tau_r = ear_delay(cos_r, cos_r.acos(), m.head_radius_m, m.speed_of_sound);
            let gamma = az_deg.to_radians();
            let woodworth = a_over_c * (gamma + gamma.sin());
            assert!(
                (tau_r - tau_l - woodworth).abs() < 1e-12,
                "az {az_deg}: itd {:.3e} vs woodworth {woodworth:.3e}",
                tau_r - tau_l
            );
        }
    }

    #[test]
    fn maps_are_zero_at_front() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        let front = grid.front_id();
        for bin in [1, 50, 372, 1023] {
            assert_eq!(set.ild_map(bin).unwrap()[front], 0.0, "bin {bin}");
            assert_eq!(set.ipd_map(bin).unwrap()[front], 0.0, "bin {bin}");
        }
    }

    #[test]
    fn ild_negates_for_mirror_pairs() {
        let m = HeadModel::default();
        for (az, el) in [(40.0, 10.0), (120.0, -30.0), (75.0, 55.0)] {
            let d = Direction::from_degrees(az, el);
            let md = Direction::from_degrees(-az, el);
            for bin in [14, 372, 700] {
                let (dl, dr) = sphere_hrtf(&d, bin, &m);
                let (ml, mr) = sphere_hrtf(&md, bin, &m);
                let ild_d = dl.norm().ln() - dr.norm().ln();
                let ild_m = ml.norm().ln() - mr.norm().ln();
                assert!(
                    (ild_d + ild_m).abs() < 1e-12,
                    "az {az} el {el} bin {bin}: {ild_d} vs {ild_m}"
                );
            }
        }
    }

    #[test]
    fn ild_range_grows_with_frequency() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        let range = |bin: usize| {
            let map = set.ild_map(bin).unwrap();
            let max = map.iter().cloned().fold(f64::MIN, f64::max);
            let min = map.iter().cloned().fold(f64::MAX, f64::min);
            max - min
        };
        let low = range(bin_for_hz(300.0));
        let high = range(bin_for_hz(8000.0));
        assert!(
            high > 2.0 * low,
            "ILD range at 8 kHz ({high:.3}) vs 300 Hz ({low:.3})"
        );
    }

    #[test]
    fn shadow_deepens_toward_the_side_at_8khz() {
        let m = HeadModel::default();
        let bin = bin_for_hz(8000.0);
        let ild_at = |az: f64| {
            let (l, r) = sphere_hrtf(&Direction::from_degrees(az, 0.0), bin, &m);
            l.norm().ln() - r.norm().ln()
        };
        assert!(ild_at(90.0).abs() > ild_at(30.0).abs());
        assert!(ild_at(-90.0).abs() > ild_at(-30.0).abs());
    }

    #[test]
    fn notch_sits_at_the_elevation_mapped_frequency() {
        let m = HeadModel::default();
        // On the median plane both ears share the notch; scan magnitude
        // minima for a high and a low source.
        for (el, expect_hz) in [(-90.0, 6000.0), (0.0, 8000.0), (90.0, 10000.0)] {
            let d = Direction::from_degrees(0.0, el);
            let mut best = (0usize, f64::INFINITY);
            for bin in 1..HALF_LEN {
                let (l, _) = sphere_hrtf(&d, bin, &m);
                if l.norm() < best.1 {
                    best = (bin, l.norm());
                }
            }
            let hz = best.0 as f64 * SAMPLE_RATE as f64 / FRAME_LEN as f64;
            assert!(
                (hz - expect_hz).abs() < 50.0,
                "elevation {el}: notch at {hz:.0} Hz, expected {expect_hz:.0}"
            );
        }
    }

    #[test]
    fn set_round_trips_through_container() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        let dir = std::env::temp_dir().join("binaural_hrtf_roundtrip.hrtf");
        set.save(&dir).unwrap();
        let loaded = HrtfSet::load(&dir).unwrap();
        assert_eq!(set, loaded);
        std::fs::remove_file(&dir).ok();
    }

    #[test]
    fn wrong_magic_rejected() {
        let path = std::env::temp_dir().join("binaural_hrtf_badmagic.hrtf");
        std::fs::write(&path, b"NOPE plus some trailing bytes").unwrap();
        assert!(matches!(HrtfSet::load(&path), Err(HrtfError::BadMagic)));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn grid_hash_mismatch_rejected() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        let path = std::env::temp_dir().join("binaural_hrtf_badhash.hrtf");
        set.save(&path).unwrap();
        // Corrupt the stored grid hash (offset: magic 4 + version 4 + D 4 + N 4).
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[16] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            HrtfSet::load(&path),
            Err(HrtfError::GridMismatch { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_container_rejected() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        let path = std::env::temp_dir().join("binaural_hrtf_trunc.hrtf");
        set.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(HrtfSet::load(&path), Err(HrtfError::Truncated)));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn normalized_pairs_have_unit_energy() {
        let grid = build_direction_grid();
        let set = HrtfSet::synthesize(&grid, HeadModel::default());
        for dir in (0..grid.len()).step_by(31) {
            for bin in [1, 372, 1023] {
                let (l, r) = set.normalized_pair(dir, bin);
                assert!((l.norm_sqr() + r.norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
    }
}
