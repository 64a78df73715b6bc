//! Operation-based transform replication.
//!
//! Each local change becomes an [`Operation`] carrying translation, rotation
//! and scale offsets plus the author's vector clock. Receivers apply an
//! operation once its causal dependencies are met and buffer it otherwise.
//!
//! Translation and scale offsets commute, so replicas that apply the same
//! set of operations agree on those components regardless of delivery order.
//! Rotation offsets do not commute: concurrent rotations delivered in
//! different orders leave replicas with different orientations.

use serde::{Deserialize, Serialize};

use crate::clock::VectorClock;
use crate::digest::StateHasher;
use crate::error::{Error, Result};
use crate::id::ReplicaId;
use crate::math::{UnitQuaternion, Vector3};
use crate::transform::TransformSnapshot;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOperation")]
pub struct Operation {
    pub replica: ReplicaId,
    pub seq: u64,
    #[serde(rename = "pos")]
    pub pos_offset: Vector3,
    #[serde(rename = "rot")]
    pub rot_delta: UnitQuaternion,
    #[serde(rename = "scl")]
    pub scale_factor: Vector3,
    #[serde(rename = "clock")]
    pub dep_clock: VectorClock,
}

#[derive(Deserialize)]
struct RawOperation {
    replica: ReplicaId,
    seq: u64,
    pos: Vector3,
    rot: UnitQuaternion,
    scl: Vector3,
    clock: VectorClock,
}

impl TryFrom<RawOperation> for Operation {
    type Error = Error;
    fn try_from(raw: RawOperation) -> Result<Self> {
        let op = Operation {
            replica: raw.replica,
            seq: raw.seq,
            pos_offset: raw.pos,
            rot_delta: raw.rot,
            scale_factor: raw.scl,
            dep_clock: raw.clock,
        };
        op.validate()?;
        Ok(op)
    }
}

impl Operation {
    pub fn validate(&self) -> Result<()> {
        if self.seq == 0 {
            return Err(Error::Validation("operation sequence starts at 1".into()));
        }
        if self.dep_clock.get(&self.replica) != self.seq {
            return Err(Error::Validation(format!(
                "clock entry for {} is {}, expected {}",
                self.replica,
                self.dep_clock.get(&self.replica),
                self.seq
            )));
        }
        if !self.pos_offset.is_finite() {
            return Err(Error::Validation("position offset not finite".into()));
        }
        if !(self.scale_factor.is_finite() && self.scale_factor.is_positive()) {
            return Err(Error::Validation(format!(
                "scale factor {} must be positive",
                self.scale_factor
            )));
        }
        Ok(())
    }

    /// An operation with only a translation.
    pub fn is_translation_only(&self) -> bool {
        self.rot_delta == UnitQuaternion::IDENTITY && self.scale_factor == Vector3::ONE
    }
}

/// How an operation's rotation delta is folded into the current rotation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RotationEffect {
    /// `rotation = rotation * delta` (delta in the object's local frame).
    #[default]
    Compose,
    /// Equal-weight blend of the current rotation and the delta.
    Blend,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApplyOutcome {
    /// Already applied or already buffered.
    Duplicate,
    /// Dependencies unmet; the operation waits in the pending buffer.
    Buffered,
    /// This many operations took effect (the incoming one plus drained ones).
    Applied(usize),
}

/// One replica's view of a single object under operation-based sync.
///
/// Operations from each author are applied contiguously by sequence number,
/// so the vector clock doubles as the applied set: `(r, n)` has been applied
/// iff `n <= clock[r]`.
#[derive(Clone, Debug)]
pub struct OpReplicaState {
    replica: ReplicaId,
    clock: VectorClock,
    snapshot: TransformSnapshot,
    pending: Vec<Operation>,
    effect: RotationEffect,
}

impl OpReplicaState {
    pub fn new(replica: ReplicaId) -> Self {
        Self::with_origin(replica, TransformSnapshot::IDENTITY)
    }

    pub fn with_origin(replica: ReplicaId, origin: TransformSnapshot) -> Self {
        Self {
            replica,
            clock: VectorClock::new(),
            snapshot: origin,
            pending: Vec::new(),
            effect: RotationEffect::Compose,
        }
    }

    pub fn with_effect(mut self, effect: RotationEffect) -> Self {
        self.effect = effect;
        self
    }

    pub fn replica(&self) -> &ReplicaId {
        &self.replica
    }

    pub fn clock(&self) -> &VectorClock {
        &self.clock
    }

    pub fn pending(&self) -> &[Operation] {
        &self.pending
    }

    pub fn is_applied(&self, replica: &ReplicaId, seq: u64) -> bool {
        seq <= self.clock.get(replica)
    }

    /// Current local transform.
    pub fn resolve(&self) -> TransformSnapshot {
        self.snapshot
    }

    /// Authors a new operation and applies it locally before returning it
    /// for broadcast.
    pub fn create(
        &mut self,
        pos_offset: Vector3,
        rot_delta: UnitQuaternion,
        scale_factor: Vector3,
    ) -> Result<Operation> {
        let seq = self.clock.get(&self.replica) + 1;
        let dep_clock = self.clock.incremented(&self.replica);
        let op = Operation {
            replica: self.replica.clone(),
            seq,
            pos_offset,
            rot_delta,
            scale_factor,
            dep_clock,
        };
        op.validate()?;
        self.apply_effect(&op);
        Ok(op)
    }

    pub fn apply(&mut self, op: Operation) -> Result<ApplyOutcome> {
        op.validate()?;
        if self.is_applied(&op.replica, op.seq)
            || self
                .pending
                .iter()
                .any(|p| p.replica == op.replica && p.seq == op.seq)
        {
            return Ok(ApplyOutcome::Duplicate);
        }
        if !self.is_ready(&op) {
            self.pending.push(op);
            return Ok(ApplyOutcome::Buffered);
        }
        self.apply_effect(&op);
        Ok(ApplyOutcome::Applied(1 + self.drain()))
    }

    fn is_ready(&self, op: &Operation) -> bool {
        op.seq == self.clock.get(&op.replica) + 1
            && op
                .dep_clock
                .iter()
                .filter(|(r, _)| **r != op.replica)
                .all(|(r, c)| self.clock.get(r) >= c)
    }

    fn drain(&mut self) -> usize {
        let mut applied = 0;
        while let Some(i) = self.pending.iter().position(|op| self.is_ready(op)) {
            let op = self.pending.remove(i);
            self.apply_effect(&op);
            applied += 1;
        }
        applied
    }

    fn apply_effect(&mut self, op: &Operation) {
        let s = &mut self.snapshot;
        s.position = s.position + op.pos_offset;
        s.rotation = match self.effect {
            RotationEffect::Compose => s.rotation.compose(op.rot_delta),
            RotationEffect::Blend => UnitQuaternion::blend(&[s.rotation, op.rot_delta], &[1.0, 1.0])
                // Antipodal inputs cancel; fall back to composing.
                .unwrap_or_else(|_| s.rotation.compose(op.rot_delta)),
        };
        s.scale = s.scale.hadamard(op.scale_factor);
        self.clock.join(&op.dep_clock);
    }

    /// Digest over snapshot, clock and pending buffer.
    pub fn digest(&self) -> String {
        let mut h = StateHasher::new();
        h.tag(b'o').snapshot(&self.snapshot).clock(&self.clock);
        let mut pending: Vec<_> = self.pending.iter().map(|p| (&p.replica, p.seq)).collect();
        pending.sort();
        h.u64(pending.len() as u64);
        for (r, s) in pending {
            h.replica(r).u64(s);
        }
        h.finish()
    }
}
