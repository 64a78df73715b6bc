//! State-based transform CRDT with two synchronization modes.
//!
//! In local-space mode every replica owns a cumulative offset (translation,
//! rotation, scale) and the pose is the origin folded with all offsets, the
//! way a PN-counter sums per-replica contributions. In world-space mode
//! replicas write absolute poses tagged with a Lamport stamp and the causal
//! context they observed; concurrent writes are all retained and collapsed
//! at read time by a [`Strategy`].
//!
//! Alongside the pose the object carries a grab register (who is holding it
//! and since when) and an LWW mode register selecting the active mode.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::clock::{CausalOrder, VectorClock};
use crate::digest::StateHasher;
use crate::error::{Error, Result};
use crate::id::{LamportStamp, ReplicaId};
use crate::math::{UnitQuaternion, Vector3};
use crate::strategy::Strategy;
use crate::transform::TransformSnapshot;

/// Default movement threshold in scene units below which local updates are dropped.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Samples kept for dead-reckoning extrapolation.
pub const HISTORY_CAPACITY: usize = 8;

/// Cumulative contribution of one replica in local-space mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetEntry {
    pub seq: u64,
    pub pos: Vector3,
    pub rot: UnitQuaternion,
    pub scl: Vector3,
}

impl Default for OffsetEntry {
    fn default() -> Self {
        Self {
            seq: 0,
            pos: Vector3::ZERO,
            rot: UnitQuaternion::IDENTITY,
            scl: Vector3::ONE,
        }
    }
}

impl OffsetEntry {
    fn tie_key(&self) -> (u64, [u64; 10]) {
        let t = TransformSnapshot {
            position: self.pos,
            rotation: self.rot,
            scale: self.scl,
        };
        (self.seq, t.bits())
    }
}

/// An absolute pose written in world-space mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedValue {
    pub val: TransformSnapshot,
    pub stamp: LamportStamp,
    pub clock: VectorClock,
}

impl TaggedValue {
    /// Strict order used to keep the version set an antichain: causal
    /// dominance first, then stamp and value bits for identical contexts.
    fn is_dominated_by(&self, other: &TaggedValue) -> bool {
        match self.clock.compare(&other.clock) {
            CausalOrder::Before => true,
            CausalOrder::Equal => {
                (&self.stamp, self.val.bits()) < (&other.stamp, other.val.bits())
            }
            _ => false,
        }
    }

    fn sort_key(&self) -> (&LamportStamp, [u64; 10]) {
        (&self.stamp, self.val.bits())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrabEntry {
    #[serde(rename = "h")]
    pub holding: bool,
    #[serde(rename = "seq")]
    pub grab_seq: u64,
    /// Start of the current hold; kept from the last grab after release.
    pub since: LamportStamp,
}

impl GrabEntry {
    fn supersedes(&self, other: &GrabEntry) -> bool {
        (self.grab_seq, self.holding, &self.since) > (other.grab_seq, other.holding, &other.since)
    }
}

/// LWW register holding the synchronization mode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeRegister {
    pub local: bool,
    pub stamp: Option<LamportStamp>,
}

impl Default for ModeRegister {
    fn default() -> Self {
        Self {
            local: true,
            stamp: None,
        }
    }
}

/// Recent resolved positions, used only for prediction. Not replicated.
#[derive(Clone, Debug, Default)]
struct History(VecDeque<(LamportStamp, Vector3)>);

impl History {
    fn record(&mut self, stamp: LamportStamp, pos: Vector3) {
        if self.0.back().is_some_and(|(s, _)| *s >= stamp) {
            return;
        }
        if self.0.len() == HISTORY_CAPACITY {
            self.0.pop_front();
        }
        self.0.push_back((stamp, pos));
    }

    /// Constant-velocity extrapolation from the last two samples.
    fn predict(&self, horizon: u64) -> Option<Vector3> {
        let mut it = self.0.iter().rev();
        let (t2, p2) = it.next()?;
        let Some((t1, p1)) = it.next() else {
            return Some(*p2);
        };
        let dt = t2.counter.saturating_sub(t1.counter);
        if dt == 0 {
            return Some(*p2);
        }
        let velocity = (*p2 - *p1).scale(1.0 / dt as f64);
        Some(*p2 + velocity.scale(horizon as f64))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawMv")]
pub struct MvTransformer {
    origin: TransformSnapshot,
    offsets: BTreeMap<ReplicaId, OffsetEntry>,
    world: Vec<TaggedValue>,
    grabs: BTreeMap<ReplicaId, GrabEntry>,
    mode: ModeRegister,
    #[serde(skip)]
    history: History,
}

#[derive(Deserialize)]
struct RawMv {
    origin: TransformSnapshot,
    offsets: BTreeMap<ReplicaId, OffsetEntry>,
    world: Vec<TaggedValue>,
    grabs: BTreeMap<ReplicaId, GrabEntry>,
    mode: ModeRegister,
}

impl TryFrom<RawMv> for MvTransformer {
    type Error = Error;
    fn try_from(raw: RawMv) -> Result<Self> {
        for (r, e) in &raw.offsets {
            if !(e.pos.is_finite() && e.scl.is_finite() && e.scl.is_positive()) {
                return Err(Error::Validation(format!("bad offset entry for {r}")));
            }
        }
        let mut mv = MvTransformer {
            origin: raw.origin,
            offsets: raw.offsets,
            world: raw.world,
            grabs: raw.grabs,
            mode: raw.mode,
            history: History::default(),
        };
        mv.normalize_world();
        Ok(mv)
    }
}

impl PartialEq for MvTransformer {
    fn eq(&self, other: &Self) -> bool {
        self.origin.bit_eq(&other.origin)
            && self.offsets == other.offsets
            && self.world == other.world
            && self.grabs == other.grabs
            && self.mode == other.mode
    }
}

impl MvTransformer {
    pub fn new(origin: TransformSnapshot) -> Self {
        Self {
            origin,
            offsets: BTreeMap::new(),
            world: Vec::new(),
            grabs: BTreeMap::new(),
            mode: ModeRegister::default(),
            history: History::default(),
        }
    }

    pub fn origin(&self) -> &TransformSnapshot {
        &self.origin
    }

    pub fn offsets(&self) -> &BTreeMap<ReplicaId, OffsetEntry> {
        &self.offsets
    }

    /// Concurrent world-space versions, ordered by stamp.
    pub fn world_versions(&self) -> &[TaggedValue] {
        &self.world
    }

    pub fn grabs(&self) -> &BTreeMap<ReplicaId, GrabEntry> {
        &self.grabs
    }

    pub fn mode(&self) -> &ModeRegister {
        &self.mode
    }

    pub fn is_local(&self) -> bool {
        self.mode.local
    }

    pub fn holders(&self) -> Vec<ReplicaId> {
        self.grabs
            .iter()
            .filter(|(_, g)| g.holding)
            .map(|(r, _)| r.clone())
            .collect()
    }

    pub fn is_held(&self) -> bool {
        self.grabs.values().any(|g| g.holding)
    }

    /// Number of world-space versions beyond the first; zero in local mode.
    pub fn conflicts(&self) -> usize {
        if self.mode.local {
            0
        } else {
            self.world.len().saturating_sub(1)
        }
    }

    /// Highest Lamport counter mentioned anywhere in the state.
    pub fn max_counter(&self) -> u64 {
        let world = self.world.iter().map(|v| v.stamp.counter);
        let grabs = self.grabs.values().map(|g| g.since.counter);
        let mode = self.mode.stamp.iter().map(|s| s.counter);
        world.chain(grabs).chain(mode).max().unwrap_or(0)
    }

    /// Causal context for a new world-space write by `r`: everything observed
    /// so far plus one event of `r`.
    pub fn world_context(&self, r: &ReplicaId) -> VectorClock {
        let mut ctx = VectorClock::new();
        for v in &self.world {
            ctx.join(&v.clock);
        }
        ctx.incremented(r)
    }

    /// Moves the object toward `target` by updating `r`'s cumulative offset.
    ///
    /// Translation and scale reach `target` exactly. The rotation delta is
    /// right-composed onto `r`'s accumulator, which lands on the target
    /// orientation when no replica ordered after `r` holds a rotation offset.
    /// Returns `false` when the move is within `tolerance` and was dropped.
    pub fn local_update(
        &mut self,
        r: &ReplicaId,
        target: &TransformSnapshot,
        tolerance: f64,
    ) -> Result<bool> {
        if !self.mode.local {
            return Err(Error::Mode { expected: "local-space" });
        }
        target.validate()?;
        let current = self.resolve_local();
        if current.position.max_abs_diff(target.position) <= tolerance
            && current.rotation.max_abs_diff(target.rotation) <= tolerance
            && current.scale.max_abs_diff(target.scale) <= tolerance
        {
            return Ok(false);
        }
        let dpos = target.position - current.position;
        let drot = current.rotation.inverse().compose(target.rotation);
        let dscl = target.scale.divide(current.scale);
        self.apply_offset(r, dpos, drot, dscl)?;
        Ok(true)
    }

    /// Folds a relative change into `r`'s offset entry.
    pub fn apply_offset(
        &mut self,
        r: &ReplicaId,
        dpos: Vector3,
        drot: UnitQuaternion,
        dscl: Vector3,
    ) -> Result<()> {
        if !self.mode.local {
            return Err(Error::Mode { expected: "local-space" });
        }
        if !dpos.is_finite() || !(dscl.is_finite() && dscl.is_positive()) {
            return Err(Error::Validation("offset must be finite with positive scale".into()));
        }
        let e = self.offsets.entry(r.clone()).or_default();
        e.seq += 1;
        e.pos = e.pos + dpos;
        e.rot = e.rot.compose(drot);
        e.scl = e.scl.hadamard(dscl);
        Ok(())
    }

    /// Writes an absolute pose in world-space mode. Versions whose context is
    /// covered by `ctx` are discarded as overwritten.
    pub fn world_update(
        &mut self,
        r: &ReplicaId,
        value: TransformSnapshot,
        stamp: LamportStamp,
        ctx: VectorClock,
    ) -> Result<()> {
        if self.mode.local {
            return Err(Error::Mode { expected: "world-space" });
        }
        value.validate()?;
        let previous = self
            .world
            .iter()
            .filter(|v| v.stamp.replica == *r)
            .map(|v| &v.stamp)
            .max();
        if stamp.replica != *r || previous.is_some_and(|p| *p >= stamp) {
            return Err(Error::Stamp {
                replica: r.to_string(),
                stamp: stamp.to_string(),
                previous: previous.map(|p| p.to_string()).unwrap_or_default(),
            });
        }
        self.history.record(stamp.clone(), value.position);
        self.world.retain(|v| !v.clock.dominated_by(&ctx));
        self.world.push(TaggedValue {
            val: value,
            stamp,
            clock: ctx,
        });
        self.normalize_world();
        Ok(())
    }

    /// Starts or ends a hold by `r`. Repeating the current state is a no-op.
    pub fn set_grab(&mut self, r: &ReplicaId, holding: bool, stamp: LamportStamp) -> bool {
        match self.grabs.get_mut(r) {
            Some(g) if g.holding == holding => false,
            Some(g) => {
                g.grab_seq += 1;
                g.holding = holding;
                if holding {
                    g.since = stamp;
                }
                true
            }
            None => {
                self.grabs.insert(
                    r.clone(),
                    GrabEntry {
                        holding,
                        grab_seq: 1,
                        since: stamp,
                    },
                );
                true
            }
        }
    }

    /// LWW write of the mode register. Returns whether the register changed.
    pub fn set_mode(&mut self, local: bool, stamp: LamportStamp) -> bool {
        let candidate = ModeRegister {
            local,
            stamp: Some(stamp),
        };
        if mode_key(&candidate) > mode_key(&self.mode) {
            self.mode = candidate;
            true
        } else {
            false
        }
    }

    /// Adds a resolved position sample for dead reckoning. Local world-space
    /// writes record themselves; drivers add samples after merges.
    pub fn record_sample(&mut self, stamp: LamportStamp, pos: Vector3) {
        self.history.record(stamp, pos);
    }

    pub fn merge(&mut self, other: &MvTransformer) -> Result<()> {
        if !self.origin.bit_eq(&other.origin) {
            return Err(Error::Identity(format!(
                "origins {} and {} differ",
                self.origin.position, other.origin.position
            )));
        }
        for (r, theirs) in &other.offsets {
            match self.offsets.get_mut(r) {
                Some(ours) if ours.tie_key() >= theirs.tie_key() => {}
                Some(ours) => *ours = *theirs,
                None => {
                    self.offsets.insert(r.clone(), *theirs);
                }
            }
        }
        for (r, theirs) in &other.grabs {
            match self.grabs.get_mut(r) {
                Some(ours) if !theirs.supersedes(ours) => {}
                Some(ours) => *ours = theirs.clone(),
                None => {
                    self.grabs.insert(r.clone(), theirs.clone());
                }
            }
        }
        if mode_key(&other.mode) > mode_key(&self.mode) {
            self.mode = other.mode.clone();
        }
        self.world.extend(other.world.iter().cloned());
        self.normalize_world();
        Ok(())
    }

    pub fn merged(&self, other: &MvTransformer) -> Result<MvTransformer> {
        let mut out = self.clone();
        out.merge(other)?;
        Ok(out)
    }

    /// Reduces the version set to its maximal elements in canonical order.
    fn normalize_world(&mut self) {
        self.world.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        self.world.dedup();
        let keep: Vec<bool> = self
            .world
            .iter()
            .map(|v| !self.world.iter().any(|w| v.is_dominated_by(w)))
            .collect();
        let mut i = 0;
        self.world.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }

    /// Origin folded with every replica's offset, in ascending replica order.
    pub fn resolve_local(&self) -> TransformSnapshot {
        let mut out = self.origin;
        for e in self.offsets.values() {
            out.position = out.position + e.pos;
            out.rotation = out.rotation.compose(e.rot);
            out.scale = out.scale.hadamard(e.scl);
        }
        out
    }

    pub fn resolve(&self, strategy: Strategy) -> TransformSnapshot {
        if self.mode.local {
            return self.resolve_local();
        }
        match self.world.as_slice() {
            [] => self.origin,
            [only] => only.val,
            versions => match strategy {
                Strategy::Lww => lww(versions).val,
                Strategy::Average => average(versions),
                Strategy::Constraint => self.constrained(versions).val,
                Strategy::DeadReckoning { horizon } => match self.history.predict(horizon) {
                    Some(p) => closest(versions, p).val,
                    None => lww(versions).val,
                },
            },
        }
    }

    fn constrained<'a>(&self, versions: &'a [TaggedValue]) -> &'a TaggedValue {
        let longest = self
            .grabs
            .iter()
            .filter(|(_, g)| g.holding)
            .min_by(|a, b| a.1.since.cmp(&b.1.since).then_with(|| a.0.cmp(b.0)))
            .map(|(r, _)| r);
        longest
            .and_then(|holder| versions.iter().rev().find(|v| v.stamp.replica == *holder))
            .unwrap_or_else(|| lww(versions))
    }

    pub fn digest(&self) -> String {
        let mut h = StateHasher::new();
        self.hash_into(&mut h);
        h.finish()
    }

    pub(crate) fn hash_into(&self, h: &mut StateHasher) {
        h.tag(b'm').snapshot(&self.origin);
        h.u64(self.offsets.len() as u64);
        for (r, e) in &self.offsets {
            h.replica(r).u64(e.seq).vector(e.pos).quat(e.rot).vector(e.scl);
        }
        h.u64(self.world.len() as u64);
        for v in &self.world {
            h.snapshot(&v.val).stamp(&v.stamp).clock(&v.clock);
        }
        h.u64(self.grabs.len() as u64);
        for (r, g) in &self.grabs {
            h.replica(r).bool(g.holding).u64(g.grab_seq).stamp(&g.since);
        }
        h.bool(self.mode.local);
        match &self.mode.stamp {
            Some(s) => h.tag(1).stamp(s),
            None => h.tag(0),
        };
    }

    /// Checks the structural invariants; used by harness self-checks.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, v) in self.world.iter().enumerate() {
            for (j, w) in self.world.iter().enumerate() {
                if i != j && v.clock.compare(&w.clock) == CausalOrder::Before {
                    return Err(Error::Validation(format!(
                        "world version {} is dominated by {}",
                        v.stamp, w.stamp
                    )));
                }
            }
        }
        Ok(())
    }
}

fn mode_key(m: &ModeRegister) -> (Option<&LamportStamp>, bool) {
    (m.stamp.as_ref(), m.local)
}

fn lww(versions: &[TaggedValue]) -> &TaggedValue {
    // Sorted by stamp, so the last entry carries the highest one.
    versions.last().expect("nonempty version set")
}

fn average(versions: &[TaggedValue]) -> TransformSnapshot {
    let n = versions.len() as f64;
    let mut pos = Vector3::ZERO;
    let mut scl = Vector3::ZERO;
    for v in versions {
        pos = pos + v.val.position;
        scl = scl + v.val.scale;
    }
    let rots: Vec<_> = versions.iter().map(|v| v.val.rotation).collect();
    let rotation = UnitQuaternion::blend(&rots, &vec![1.0; rots.len()])
        .unwrap_or_else(|_| lww(versions).val.rotation);
    TransformSnapshot {
        position: pos.scale(1.0 / n),
        rotation,
        scale: scl.scale(1.0 / n),
    }
}

fn closest(versions: &[TaggedValue], predicted: Vector3) -> &TaggedValue {
    // Iterating in stamp order with `<=` keeps the later stamp on ties.
    let mut best = &versions[0];
    let mut best_d = best.val.position.distance(predicted);
    for v in &versions[1..] {
        let d = v.val.position.distance(predicted);
        if d <= best_d {
            best = v;
            best_d = d;
        }
    }
    best
}
