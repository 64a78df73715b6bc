//! Vector and rotation primitives.
//!
//! Only what the transform CRDTs need: componentwise vector arithmetic and
//! unit quaternions kept in a canonical sign so that `q` and `-q` compare
//! and hash identically.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when checking that a quaternion is unit length.
pub const UNIT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vector3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vector3 {
    pub const ZERO: Vector3 = Vector3::new(0.0, 0.0, 0.0);
    pub const ONE: Vector3 = Vector3::new(1.0, 1.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Builds a vector, rejecting NaN and infinite components.
    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = Self::new(x, y, z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Validation(format!("non-finite vector {v}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn is_positive(&self) -> bool {
        self.x > 0.0 && self.y > 0.0 && self.z > 0.0
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    /// Componentwise product.
    pub fn hadamard(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    /// Componentwise quotient.
    pub fn divide(self, o: Self) -> Self {
        Self::new(self.x / o.x, self.y / o.y, self.z / o.z)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(self, o: Self) -> f64 {
        (self.x - o.x)
            .abs()
            .max((self.y - o.y).abs())
            .max((self.z - o.z).abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl fmt::Display for Vector3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vector3 {
    type Output = Vector3;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vector3 {
    type Output = Vector3;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vector3 {
    type Output = Vector3;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl Serialize for Vector3 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vector3 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Vector3::try_new(x, y, z).map_err(D::Error::custom)
    }
}

/// A rotation stored as a normalized quaternion with canonical sign
/// (`w >= 0`, and when `w == 0` the first nonzero of `x, y, z` is positive).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes raw components. Components already of
    /// unit norm up to rounding are kept bit for bit, so that normalizing is
    /// idempotent and values survive a serialization round trip unchanged.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Validation(format!(
                "cannot normalize quaternion [{w}, {x}, {y}, {z}]"
            )));
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self { w, x, y, z }.canonical());
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical())
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !angle.is_finite() {
            return Err(Error::Validation("degenerate axis-angle".into()));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis.scale(1.0 / n);
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    fn canonical(self) -> Self {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|c| *c != 0.0)
                .is_some_and(|c| c < 0.0)
        };
        if flip {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            // Also maps -0.0 to 0.0 so bit-level digests agree.
            Self {
                w: self.w + 0.0,
                x: self.x + 0.0,
                y: self.y + 0.0,
                z: self.z + 0.0,
            }
        }
    }

    /// Hamilton product `self * other`, renormalized.
    pub fn compose(self, o: Self) -> Self {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        // Product of unit quaternions never degenerates.
        Self::new(w, x, y, z).expect("product of unit quaternions")
    }

    pub fn inverse(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
        .canonical()
    }

    pub fn dot(self, o: Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation angle between two orientations, in radians.
    pub fn angle_to(self, o: Self) -> f64 {
        2.0 * self.dot(o).abs().min(1.0).acos()
    }

    /// Largest componentwise difference after sign alignment.
    pub fn max_abs_diff(self, o: Self) -> f64 {
        let s = if self.dot(o) < 0.0 { -1.0 } else { 1.0 };
        (self.w - s * o.w)
            .abs()
            .max((self.x - s * o.x).abs())
            .max((self.y - s * o.y).abs())
            .max((self.z - s * o.z).abs())
    }

    /// Rotates a vector.
    pub fn rotate(self, v: Vector3) -> Vector3 {
        let p = Self {
            w: 0.0,
            x: v.x,
            y: v.y,
            z: v.z,
        };
        let r = self.raw_mul(p).raw_mul(self.inverse());
        Vector3::new(r.x, r.y, r.z)
    }

    fn raw_mul(self, o: Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Weighted blend of rotations: each input is sign-aligned to the first,
    /// summed with its weight, and renormalized.
    ///
    /// This is a normalized linear blend, an approximation of the true
    /// rotational mean that is accurate for small angular spreads. Callers
    /// that need replica-independent output pass inputs in a canonical order.
    pub fn blend(qs: &[UnitQuaternion], weights: &[f64]) -> Result<Self> {
        if qs.is_empty() || qs.len() != weights.len() {
            return Err(Error::Blend(format!(
                "{} quaternions with {} weights",
                qs.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Blend("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Blend("weights sum to zero".into()));
        }
        let first = qs[0];
        let mut acc = [0.0f64; 4];
        for (q, w) in qs.iter().zip(weights) {
            let s = if first.dot(*q) < 0.0 { -w } else { *w };
            acc[0] += s * q.w;
            acc[1] += s * q.x;
            acc[2] += s * q.y;
            acc[3] += s * q.z;
        }
        Self::new(acc[0], acc[1], acc[2], acc[3])
            .map_err(|_| Error::Blend("rotations cancel out".into()))
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, o: Self) -> Self {
        self.compose(o)
    }
}

impl Serialize for UnitQuaternion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for UnitQuaternion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        UnitQuaternion::new(w, x, y, z).map_err(D::Error::custom)
    }
}
