//! WGS-84 coordinate frames: geodetic, Earth-centered Earth-fixed and local
//! East-North-Up.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis, meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

const MIN_NORM: f64 = 6.2e6;
const MAX_NORM: f64 = 4.5e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcefPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefPosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn distance(self, other: EcefPosition) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// True when the norm lies in the band occupied by ground points and
    /// satellites.
    pub fn is_plausible(self) -> bool {
        let n = self.norm();
        self.is_finite() && (MIN_NORM..=MAX_NORM).contains(&n)
    }
}

impl From<[f64; 3]> for EcefPosition {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPosition {
    /// Degrees, [-90, 90].
    pub latitude: f64,
    /// Degrees, [-180, 180).
    pub longitude: f64,
    /// Ellipsoidal height, meters.
    pub height: f64,
}

impl GeodeticPosition {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        let g = Self {
            latitude,
            longitude,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) || !self.latitude.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(-180.0..180.0).contains(&self.longitude) || !self.longitude.is_finite() {
            return Err(Error::InvalidCoordinate(format!(
                "longitude {} outside [-180, 180)",
                self.longitude
            )));
        }
        if !self.height.is_finite() {
            return Err(Error::InvalidCoordinate("height is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuPosition {
    pub east: f64,
    pub north: f64,
    pub up: f64,
}

impl EnuPosition {
    pub const fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.east, self.north, self.up)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn horizontal(self) -> [f64; 2] {
        [self.east, self.north]
    }
}

pub fn geodetic_to_ecef(g: GeodeticPosition) -> EcefPosition {
    let lat = g.latitude.to_radians();
    let lon = g.longitude.to_radians();
    let (slat, clat) = lat.sin_cos();
    let (slon, clon) = lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
    EcefPosition::new(
        (n + g.height) * clat * clon,
        (n + g.height) * clat * slon,
        (n * (1.0 - WGS84_E2) + g.height) * slat,
    )
}

/// Iterative inversion (Bowring start, Newton refinement on latitude).
/// Converges to well under a millimeter within a handful of iterations.
pub fn ecef_to_geodetic(p: EcefPosition) -> GeodeticPosition {
    let rho = p.x.hypot(p.y);
    let mut lon = p.y.atan2(p.x);
    if lon >= std::f64::consts::PI {
        lon -= 2.0 * std::f64::consts::PI;
    }
    if rho < 1e-9 {
        let lat = if p.z >= 0.0 { 90.0 } else { -90.0 };
        return GeodeticPosition {
            latitude: lat,
            longitude: 0.0,
            height: p.z.abs() - WGS84_B,
        };
    }
    let ep2 = (WGS84_A * WGS84_A - WGS84_B * WGS84_B) / (WGS84_B * WGS84_B);
    let beta0 = (WGS84_A * p.z).atan2(WGS84_B * rho);
    let mut lat = (p.z + ep2 * WGS84_B * beta0.sin().powi(3))
        .atan2(rho - WGS84_E2 * WGS84_A * beta0.cos().powi(3));
    let mut height = 0.0;
    for _ in 0..10 {
        let (s, c) = lat.sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
        height = if c.abs() > 1e-10 {
            rho / c - n
        } else {
            p.z.abs() / s.abs() - n * (1.0 - WGS84_E2)
        };
        let next = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + height)));
        let done = (next - lat).abs() < 1e-14;
        lat = next;
        if done {
            break;
        }
    }
    let (s, c) = lat.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * s * s).sqrt();
    if c.abs() > 1e-10 {
        height = rho / c - n;
    }
    GeodeticPosition {
        latitude: lat.to_degrees(),
        longitude: lon.to_degrees(),
        height,
    }
}

/// Rotation taking ECEF difference vectors into ENU at `origin`.
pub fn enu_rotation(origin: GeodeticPosition) -> Matrix3<f64> {
    let (slat, clat) = origin.latitude.to_radians().sin_cos();
    let (slon, clon) = origin.longitude.to_radians().sin_cos();
    Matrix3::new(
        -slon,
        clon,
        0.0,
        -slat * clon,
        -slat * slon,
        clat,
        clat * clon,
        clat * slon,
        slat,
    )
}

pub fn ecef_to_enu(p: EcefPosition, origin: GeodeticPosition) -> EnuPosition {
    LocalFrame::new(origin).to_enu(p)
}

pub fn enu_to_ecef(e: EnuPosition, origin: GeodeticPosition) -> EcefPosition {
    LocalFrame::new(origin).to_ecef(e)
}

/// A local tangent plane with its rotation cached; the frame every
/// horizontal computation in the pipeline runs in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: GeodeticPosition,
    origin_ecef: Vector3<f64>,
    rot: Matrix3<f64>,
}

impl LocalFrame {
    pub fn new(origin: GeodeticPosition) -> Self {
        Self {
            origin,
            origin_ecef: geodetic_to_ecef(origin).to_vector(),
            rot: enu_rotation(origin),
        }
    }

    pub fn to_enu(&self, p: EcefPosition) -> EnuPosition {
        EnuPosition::from_vector(&(self.rot * (p.to_vector() - self.origin_ecef)))
    }

    pub fn to_ecef(&self, e: EnuPosition) -> EcefPosition {
        EcefPosition::from_vector(&(self.rot.transpose() * e.to_vector() + self.origin_ecef))
    }

    /// Rotates an ECEF-frame vector (velocity, difference) into ENU axes.
    pub fn rotate_to_enu(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rot * v
    }

    pub fn rotate_to_ecef(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rot.transpose() * v
    }

    /// Rotates a 3x3 ECEF covariance into ENU axes.
    pub fn covariance_to_enu(&self, c: &Matrix3<f64>) -> Matrix3<f64> {
        self.rot * c * self.rot.transpose()
    }

    /// Local "up" unit vector expressed in ECEF.
    pub fn up(&self) -> Vector3<f64> {
        self.rot.row(2).transpose()
    }
}
