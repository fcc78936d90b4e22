//! Quasi-uniform direction grid on the unit sphere.
//!
//! The pipeline estimates direction over a fixed set of D = 326 candidate
//! directions. Points are placed on a spherical Fibonacci lattice and the
//! whole lattice is then rotated so the point nearest to straight ahead
//! lands exactly on it; a rotation preserves all pairwise angles, so the
//! spacing guarantees survive the snap.
//!
//! Coordinates: x points front, y left, z up. Azimuth φ = atan2(y, x) is
//! positive to the left, elevation θ = asin(z) positive upward.

use thiserror::Error;

/// Number of grid directions.
pub const GRID_SIZE: usize = 326;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cannot normalize a near-zero vector (norm {0:.3e})")]
    ZeroVector(f64),
}

/// Unit vector direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Normalize an arbitrary vector into a direction.
    pub fn from_vector(x: f64, y: f64, z: f64) -> Result<Self, GridError> {
        let norm = (x * x + y * y + z * z).sqrt();
        if norm < 1e-9 {
            return Err(GridError::ZeroVector(norm));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Direction from azimuth (degrees, positive left) and elevation
    /// (degrees, positive up).
    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        let az = azimuth.to_radians();
        let el = elevation.to_radians();
        Self {
            x: el.cos() * az.cos(),
            y: el.cos() * az.sin(),
            z: el.sin(),
        }
    }

    /// Straight ahead: φ = 0, θ = 0.
    pub fn front() -> Self {
        Self {
            x: 1.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.y.atan2(self.x).to_degrees()
    }

    pub fn elevation_deg(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).asin().to_degrees()
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Left-right mirror image (y negated).
    pub fn mirror_left_right(&self) -> Self {
        Self {
            x: self.x,
            y: -self.y,
            z: self.z,
        }
    }

    /// Front-back mirror image (x negated).
    pub fn mirror_front_back(&self) -> Self {
        Self {
            x: -self.x,
            y: self.y,
            z: self.z,
        }
    }

    #[cfg(test)]
    fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Angle between two directions in degrees, in [0, 180].
pub fn angle_between(a: &Direction, b: &Direction) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
}

/// The canonical 326-direction grid. Index into `directions` is the
/// direction id used across the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionGrid {
    directions: Vec<Direction>,
    front_id: usize,
}

impl DirectionGrid {
    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn get(&self, id: usize) -> &Direction {
        &self.directions[id]
    }

    /// Id of the grid point at exact front.
    pub fn front_id(&self) -> usize {
        self.front_id
    }

    /// Nearest grid point to `d` and its angular distance in degrees.
    pub fn nearest(&self, d: &Direction) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, g) in self.directions.iter().enumerate() {
            let a = angle_between(d, g);
            if a < best.1 {
                best = (i, a);
            }
        }
        best
    }

    /// FNV-1a hash of all direction coordinates; identifies the grid in
    /// model and HRTF containers.
    pub fn hash_u64(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for d in &self.directions {
            eat(d.x);
            eat(d.y);
            eat(d.z);
        }
        h
    }
}

/// Build the canonical grid: Fibonacci lattice rotated so the point nearest
/// straight-ahead sits exactly at φ=0, θ=0. Deterministic.
pub fn build_direction_grid() -> DirectionGrid {
    let n = GRID_SIZE;
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut raw: Vec<Direction> = (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let az = golden_angle * i as f64;
            Direction {
                x: r * az.cos(),
                y: r * az.sin(),
                z,
            }
        })
        .collect();

    // Rotate the nearest point onto exact front (Rodrigues' formula).
    let front = Direction::front();
    let mut front_id = 0;
    let mut best = f64::INFINITY;
    for (i, d) in raw.iter().enumerate() {
        let a = angle_between(d, &front);
        if a < best {
            best = a;
            front_id = i;
        }
    }
    let p = raw[front_id];
    // Rotation axis p × front with front = (1,0,0), so axis = (0, p.z, -p.y).
    let axis = (0.0, p.z, -p.y);
    let axis_norm = (axis.1 * axis.1 + axis.2 * axis.2).sqrt();
    if axis_norm > 1e-15 {
        let k = (axis.0 / axis_norm, axis.1 / axis_norm, axis.2 / axis_norm);
        let cos_a = p.dot(&front).clamp(-1.0, 1.0);
        let sin_a = (1.0 - cos_a * cos_a).sqrt();
        for d in raw.iter_mut() {
            let v = (d.x, d.y, d.z);
            let kxv = (
                k.1 * v.2 - k.2 * v.1,
                k.2 * v.0 - k.0 * v.2,
                k.0 * v.1 - k.1 * v.0,
            );
            let kdv = k.0 * v.0 + k.1 * v.1 + k.2 * v.2;
            let rot = (
                v.0 * cos_a + kxv.0 * sin_a + k.0 * kdv * (1.0 - cos_a),
                v.1 * cos_a + kxv.1 * sin_a + k.1 * kdv * (1.0 - cos_a),
                v.2 * cos_a + kxv.2 * sin_a + k.2 * kdv * (1.0 - cos_a),
            );
            *d = Direction::from_vector(rot.0, rot.1, rot.2).expect("rotation keeps norm");
        }
    }
    raw[front_id] = front;

    DirectionGrid {
        directions: raw,
        front_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_326_unit_vectors() {
        let g = build_direction_grid();
        assert_eq!(g.len(), GRID_SIZE);
        for d in g.directions() {
            assert!((d.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_contains_exact_front() {
        let g = build_direction_grid();
        let f = g.get(g.front_id());
        assert_eq!((f.x, f.y, f.z), (1.0, 0.0, 0.0));
        assert_eq!(f.azimuth_deg(), 0.0);
        assert_eq!(f.elevation_deg(), 0.0);
    }

    #[test]
    fn nearest_neighbor_spacing_within_band() {
        let g = build_direction_grid();
        let mut min_nn = f64::INFINITY;
        let mut max_nn: f64 = 0.0;
        for i in 0..g.len() {
            let mut nn = f64::INFINITY;
            for j in 0..g.len() {
                if i != j {
                    nn = nn.min(angle_between(g.get(i), g.get(j)));
                }
            }
            min_nn = min_nn.min(nn);
            max_nn = max_nn.max(nn);
        }
        assert!(
            (9.0..=13.0).contains(&min_nn) && (9.0..=13.0).contains(&max_nn),
            "nearest-neighbor band [{min_nn:.2}°, {max_nn:.2}°] outside [9°, 13°]"
        );
    }

    #[test]
    fn angle_between_basics() {
        let a = Direction::front();
        assert_eq!(angle_between(&a, &a), 0.0);
        let anti = Direction::from_vector(-1.0, 0.0, 0.0).unwrap();
        assert!((angle_between(&a, &anti) - 180.0).abs() < 1e-12);
        let left = Direction::from_vector(0.0, 1.0, 0.0).unwrap();
        assert!((angle_between(&a, &left) - 90.0).abs() < 1e-12);
    }

    #[test]
    fn from_degrees_round_trips() {
        let d = Direction::from_degrees(42.0, -17.0);
        assert!((d.azimuth_deg() - 42.0).abs() < 1e-10);
        assert!((d.elevation_deg() + 17.0).abs() < 1e-10);
        assert!((d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(matches!(
            Direction::from_vector(0.0, 0.0, 0.0),
            Err(GridError::ZeroVector(_))
        ));
    }

    #[test]
    fn build_is_deterministic_and_hash_stable() {
        let a = build_direction_grid();
        let b = build_direction_grid();
        assert_eq!(a, b);
        assert_eq!(a.hash_u64(), b.hash_u64());
    }

    #[test]
    fn mirrors_flip_single_axes() {
        let d = Direction::from_degrees(30.0, 20.0);
        let lr = d.mirror_left_right();
        assert!((lr.azimuth_deg() + 30.0).abs() < 1e-10);
        assert!((lr.elevation_deg() - 20.0).abs() < 1e-10);
        let fb = d.mirror_front_back();
        assert!((fb.azimuth_deg() - 150.0).abs() < 1e-10);
    }

    #[test]
    fn nearest_finds_identity() {
        let g = build_direction_grid();
        for id in [0, 57, 163, 325] {
            let (found, ang) = g.nearest(g.get(id));
            assert_eq!(found, id);
            assert_eq!(ang, 0.0);
        }
    }
}
