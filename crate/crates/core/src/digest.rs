//! Canonical hashing of CRDT state for convergence checks.
//!
//! Every field is written in a fixed order with length prefixes and floats
//! as raw bit patterns, so equal digests mean bitwise-equal states.

use sha2::{Digest as _, Sha256};

use crate::clock::VectorClock;
use crate::id::{LamportStamp, ReplicaId};
use crate::math::{UnitQuaternion, Vector3};
use crate::transform::TransformSnapshot;

#[derive(Default)]
pub struct StateHasher {
    inner: Sha256,
}

impl StateHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(&mut self, tag: u8) -> &mut Self {
        self.inner.update([tag]);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.tag(v as u8)
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.inner.update(s.as_bytes());
        self
    }

    pub fn replica(&mut self, r: &ReplicaId) -> &mut Self {
        self.str(r.as_str())
    }

    pub fn stamp(&mut self, s: &LamportStamp) -> &mut Self {
        self.u64(s.counter).replica(&s.replica)
    }

    pub fn vector(&mut self, v: Vector3) -> &mut Self {
        self.f64(v.x).f64(v.y).f64(v.z)
    }

    pub fn quat(&mut self, q: UnitQuaternion) -> &mut Self {
        for c in q.to_array() {
            self.f64(c);
        }
        self
    }

    pub fn snapshot(&mut self, t: &TransformSnapshot) -> &mut Self {
        for b in t.bits() {
            self.u64(b);
        }
        self
    }

    pub fn clock(&mut self, vc: &VectorClock) -> &mut Self {
        let entries: Vec<_> = vc.iter().collect();
        self.u64(entries.len() as u64);
        for (r, c) in entries {
            self.replica(r).u64(c);
        }
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.inner.finalize())
    }
}
