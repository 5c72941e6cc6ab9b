//! Array, camera and speaker geometry.
//!
//! The camera sits at the centroid of the microphone array and is the origin
//! of the array frame. A speaker is located by azimuth `θa` (angle off the
//! array axis in the horizontal plane), elevation `θe` and distance `d_o`
//! from the camera, so that the cosine between the speaker direction and the
//! array axis is `cos θa · cos θe`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Minimum separation between two microphones, in meters.
pub const MIN_MIC_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    pub fn zero() -> Self {
        Vec3::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x.to_f64_lossy(), self.y.to_f64_lossy(), self.z.to_f64_lossy()]
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * n.recip())
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Speaker location relative to the camera: `L = [θa, θe, d_o]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerLocation3D<T> {
    azimuth_rad: T,
    elevation_rad: T,
    distance_m: T,
}

impl<T: Real> SpeakerLocation3D<T> {
    /// Builds a location, rejecting values outside `θa ∈ [0, π]`,
    /// `θe ∈ [-π/2, π/2]` and `d_o > 0`.
    pub fn new(azimuth_rad: T, elevation_rad: T, distance_m: T) -> Result<Self> {
        let tol = T::lit(1e-12);
        if !(azimuth_rad.is_finite() && elevation_rad.is_finite() && distance_m.is_finite()) {
            return Err(Error::InvalidInput("non-finite speaker location".into()));
        }
        if distance_m <= T::zero() {
            return Err(Error::InvalidInput(format!(
                "speaker distance must be positive, got {distance_m}"
            )));
        }
        if azimuth_rad < -tol || azimuth_rad > T::PI() + tol {
            return Err(Error::InvalidInput(format!(
                "azimuth {azimuth_rad} rad outside [0, pi]"
            )));
        }
        if elevation_rad.abs() > T::FRAC_PI_2() + tol {
            return Err(Error::InvalidInput(format!(
                "elevation {elevation_rad} rad outside [-pi/2, pi/2]"
            )));
        }
        Ok(SpeakerLocation3D {
            azimuth_rad: azimuth_rad.max(T::zero()).min(T::PI()),
            elevation_rad: elevation_rad.max(-T::FRAC_PI_2()).min(T::FRAC_PI_2()),
            distance_m,
        })
    }

    pub fn from_degrees(azimuth_deg: T, elevation_deg: T, distance_m: T) -> Result<Self> {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians(), distance_m)
    }

    pub fn azimuth(&self) -> T {
        self.azimuth_rad
    }

    pub fn elevation(&self) -> T {
        self.elevation_rad
    }

    pub fn distance(&self) -> T {
        self.distance_m
    }

    /// Unit direction in the canonical frame (array axis = +x, up = +z).
    pub fn unit_direction(&self) -> Vec3<T> {
        let (sa, ca) = self.azimuth_rad.sin_cos();
        let (se, ce) = self.elevation_rad.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

/// Maps a location to Cartesian coordinates in the canonical frame:
/// `d_o · (cosθe·cosθa, cosθe·sinθa, sinθe)`.
pub fn speaker_to_cartesian<T: Real>(loc: &SpeakerLocation3D<T>) -> Vec3<T> {
    loc.unit_direction() * loc.distance_m
}

/// Inverse of [`speaker_to_cartesian`].
///
/// At the poles (`cos θe = 0`) the azimuth is set to 0. Points with a
/// negative lateral coordinate lie behind the array plane and have no
/// representation with `θa ∈ [0, π]`; they are rejected.
pub fn cartesian_to_location<T: Real>(point: Vec3<T>) -> Result<SpeakerLocation3D<T>> {
    if !point.is_finite() {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let d = point.norm();
    if d <= T::zero() {
        return Err(Error::InvalidInput("zero-length position vector".into()));
    }
    let elevation = (point.z / d).max(-T::one()).min(T::one()).asin();
    let horizontal = point.x.hypot(point.y);
    let azimuth = if horizontal <= d * T::epsilon() {
        T::zero()
    } else if point.y >= -d * T::lit(1e-12) {
        point.y.max(T::zero()).atan2(point.x)
    } else {
        return Err(Error::InvalidInput(format!(
            "point lies behind the array plane (lateral coordinate {})",
            point.y
        )));
    };
    SpeakerLocation3D::new(azimuth, elevation, d)
}

/// On-disk description of an array: positions in meters, optional pair list
/// and optional axis. Missing pairs default to all adjacent pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub mic_positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub array_axis: Option<[f64; 3]>,
}

/// Microphone array with the camera at the origin (the mic centroid).
#[derive(Debug, Clone, PartialEq)]
pub struct MicArrayGeometry<T> {
    mics: Vec<Vec3<T>>,
    pairs: Vec<(usize, usize)>,
    axis: Vec3<T>,
    lateral: Vec3<T>,
    up: Vec3<T>,
}

impl<T: Real> MicArrayGeometry<T> {
    /// Builds a geometry from positions in any frame. Positions are recentred
    /// on their centroid; `pairs` defaults to adjacent pairs and `axis` to +x.
    pub fn new(positions: Vec<Vec3<T>>, pairs: Option<Vec<(usize, usize)>>, axis: Option<Vec3<T>>) -> Result<Self> {
        let m = positions.len();
        if m < 2 {
            return Err(Error::InvalidGeometry(format!("need at least 2 microphones, got {m}")));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite microphone position".into()));
        }
        for i in 0..m {
            for j in i + 1..m {
                if positions[i].distance(positions[j]) <= T::lit(MIN_MIC_SEPARATION) {
                    return Err(Error::InvalidGeometry(format!("microphones {i} and {j} coincide")));
                }
            }
        }
        let pairs = pairs.unwrap_or_else(|| (0..m - 1).map(|i| (i, i + 1)).collect());
        if pairs.is_empty() {
            return Err(Error::InvalidGeometry("empty pair list".into()));
        }
        for &(a, b) in &pairs {
            if a >= m || b >= m {
                return Err(Error::InvalidGeometry(format!(
                    "pair ({a}, {b}) references a microphone outside 0..{m}"
                )));
            }
            if a == b {
                return Err(Error::InvalidGeometry(format!("pair ({a}, {b}) is degenerate")));
            }
        }

        let axis = axis
            .unwrap_or_else(|| Vec3::new(T::one(), T::zero(), T::zero()))
            .normalized()
            .ok_or_else(|| Error::InvalidGeometry("array axis has zero length".into()))?;
        // elevation reference: world +z made orthogonal to the axis
        let world_up = Vec3::new(T::zero(), T::zero(), T::one());
        let up = (world_up - axis * world_up.dot(axis))
            .normalized()
            .filter(|_| axis.z.abs() < T::one() - T::lit(1e-9))
            .unwrap_or_else(|| {
                let y = Vec3::new(T::zero(), T::one(), T::zero());
                (y - axis * y.dot(axis)).normalized().expect("y not parallel to z axis")
            });
        let lateral = up.cross(axis);

        let n = T::from_usize_lossy(m);
        let centroid = positions.iter().fold(Vec3::zero(), |acc, &p| acc + p) * n.recip();
        let mics = positions.into_iter().map(|p| p - centroid).collect();

        Ok(MicArrayGeometry {
            mics,
            pairs,
            axis,
            lateral,
            up,
        })
    }

    /// Uniform linear array of `n` mics along +x with the given spacing.
    pub fn linear(n: usize, spacing_m: T) -> Result<Self> {
        let positions = (0..n)
            .map(|i| Vec3::new(T::from_usize_lossy(i) * spacing_m, T::zero(), T::zero()))
            .collect();
        Self::new(positions, None, None)
    }

    pub fn from_config(cfg: &GeometryConfig) -> Result<Self> {
        let positions = cfg.mic_positions.iter().map(|&p| Vec3::from_array(p)).collect();
        let pairs = cfg.pairs.as_ref().map(|ps| ps.iter().map(|&[a, b]| (a, b)).collect());
        let axis = cfg.array_axis.map(Vec3::from_array);
        Self::new(positions, pairs, axis)
    }

    pub fn to_config(&self) -> GeometryConfig {
        GeometryConfig {
            mic_positions: self.mics.iter().map(|p| p.to_array()).collect(),
            pairs: Some(self.pairs.iter().map(|&(a, b)| [a, b]).collect()),
            array_axis: Some(self.axis.to_array()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GeometryConfig = serde_json::from_str(text)?;
        Self::from_config(&cfg)
    }

    pub fn num_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Mic positions relative to the camera.
    pub fn mic_positions(&self) -> &[Vec3<T>] {
        &self.mics
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn array_axis(&self) -> Vec3<T> {
        self.axis
    }

    /// Camera position, always the origin of the array frame.
    pub fn camera_position(&self) -> Vec3<T> {
        Vec3::zero()
    }

    /// Signed coordinate of each mic along the array axis.
    pub fn axial_coordinates(&self) -> Vec<T> {
        self.mics.iter().map(|&p| p.dot(self.axis)).collect()
    }

    /// True when every mic lies on the line through the camera along the axis.
    pub fn is_collinear(&self) -> bool {
        self.mics
            .iter()
            .all(|&p| (p - self.axis * p.dot(self.axis)).norm() <= T::lit(1e-9))
    }

    /// Speaker position relative to the camera for a location expressed in
    /// this array's frame.
    pub fn location_to_point(&self, loc: &SpeakerLocation3D<T>) -> Vec3<T> {
        let u = loc.unit_direction();
        (self.axis * u.x + self.lateral * u.y + self.up * u.z) * loc.distance()
    }

    /// Inverse of [`Self::location_to_point`].
    pub fn point_to_location(&self, point: Vec3<T>) -> Result<SpeakerLocation3D<T>> {
        cartesian_to_location(Vec3::new(
            point.dot(self.axis),
            point.dot(self.lateral),
            point.dot(self.up),
        ))
    }

    /// Distance from the speaker to microphone `i` by the law of cosines:
    /// `d_i² = |m_i|² + d_o² − 2·d_o·(m_i · û)`.
    ///
    /// For a mic on the axis at signed coordinate `x_i` the dot product is
    /// `x_i·cosθa·cosθe`, which is the two-distance form with `d_om = |x_i|`
    /// and the sign carried by `x_i`.
    pub fn mic_distance(&self, loc: &SpeakerLocation3D<T>, i: usize) -> T {
        let m = self.mics[i];
        let u = self.location_to_point(loc) * loc.distance().recip();
        let d_o = loc.distance();
        let d_om_sq = m.dot(m);
        let two = T::lit(2.0);
        (d_om_sq + d_o * d_o - two * d_o * m.dot(u)).max(T::zero()).sqrt()
    }

    /// Distances from the speaker to every mic.
    pub fn mic_distances(&self, loc: &SpeakerLocation3D<T>) -> Vec<T> {
        (0..self.num_mics()).map(|i| self.mic_distance(loc, i)).collect()
    }

    /// `(d_m1, d_m2)` for every configured pair.
    pub fn pair_distances(&self, loc: &SpeakerLocation3D<T>) -> Vec<(T, T)> {
        self.pairs
            .iter()
            .map(|&(a, b)| (self.mic_distance(loc, a), self.mic_distance(loc, b)))
            .collect()
    }
}
