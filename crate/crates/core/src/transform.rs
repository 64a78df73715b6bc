use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::math::{UnitQuaternion, Vector3};

/// Position, rotation and scale of one object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransformSnapshot {
    #[serde(rename = "pos")]
    pub position: Vector3,
    #[serde(rename = "rot")]
    pub rotation: UnitQuaternion,
    #[serde(rename = "scl")]
    pub scale: Vector3,
}

impl Default for TransformSnapshot {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TransformSnapshot {
    pub const IDENTITY: TransformSnapshot = TransformSnapshot {
        position: Vector3::ZERO,
        rotation: UnitQuaternion::IDENTITY,
        scale: Vector3::ONE,
    };

    pub fn new(position: Vector3, rotation: UnitQuaternion, scale: Vector3) -> Result<Self> {
        let t = Self {
            position,
            rotation,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn at(position: Vector3) -> Self {
        Self {
            position,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.is_finite() {
            return Err(Error::Validation(format!("position {} not finite", self.position)));
        }
        if !(self.scale.is_finite() && self.scale.is_positive()) {
            return Err(Error::Validation(format!("scale {} must be positive", self.scale)));
        }
        Ok(())
    }

    /// Bitwise equality of every component.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let a = self.bits();
        let b = other.bits();
        a == b
    }

    pub(crate) fn bits(&self) -> [u64; 10] {
        let p = self.position.to_array();
        let r = self.rotation.to_array();
        let s = self.scale.to_array();
        [
            p[0].to_bits(),
            p[1].to_bits(),
            p[2].to_bits(),
            r[0].to_bits(),
            r[1].to_bits(),
            r[2].to_bits(),
            r[3].to_bits(),
            s[0].to_bits(),
            s[1].to_bits(),
            s[2].to_bits(),
        ]
    }
}

#[derive(Deserialize)]
struct RawSnapshot {
    pos: Vector3,
    rot: UnitQuaternion,
    scl: Vector3,
}

impl<'de> Deserialize<'de> for TransformSnapshot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSnapshot::deserialize(d)?;
        TransformSnapshot::new(raw.pos, raw.rot, raw.scl).map_err(D::Error::custom)
    }
}
