//! The shared scene: an add-only map from brick ids to transform CRDTs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::StateHasher;
use crate::error::{Error, Result};
use crate::id::{LamportStamp, ReplicaId, RULE_PREFIX};
use crate::math::{UnitQuaternion, Vector3};
use crate::mv::MvTransformer;
use crate::transform::TransformSnapshot;

/// Brick identity: spawning replica plus its spawn counter. Printed `spawner:seq`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BrickId {
    pub spawner: ReplicaId,
    pub seq: u64,
}

impl BrickId {
    pub fn new(spawner: ReplicaId, seq: u64) -> Self {
        Self { spawner, seq }
    }
}

impl fmt::Display for BrickId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.spawner, self.seq)
    }
}

impl FromStr for BrickId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (spawner, seq) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Validation(format!("brick id {s:?} lacks ':'")))?;
        let seq = seq
            .parse()
            .map_err(|_| Error::Validation(format!("brick id {s:?} has a bad sequence")))?;
        Ok(BrickId::new(ReplicaId::new(spawner)?, seq))
    }
}

impl Serialize for BrickId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BrickId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RuleKind {
    /// Constant fall speed in units per second.
    Gravity { fall_speed: f64 },
}

/// A state change with no human author, applied under a reserved replica id.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalRule {
    id: ReplicaId,
    kind: RuleKind,
    gate_on_grab: bool,
}

impl GlobalRule {
    pub fn gravity(id: ReplicaId, fall_speed: f64, gate_on_grab: bool) -> Result<Self> {
        if !id.is_rule() {
            return Err(Error::Validation(format!(
                "rule author {id} must start with {RULE_PREFIX}"
            )));
        }
        if !fall_speed.is_finite() {
            return Err(Error::Validation("fall speed must be finite".into()));
        }
        Ok(Self {
            id,
            kind: RuleKind::Gravity { fall_speed },
            gate_on_grab,
        })
    }

    pub fn id(&self) -> &ReplicaId {
        &self.id
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn gate_on_grab(&self) -> bool {
        self.gate_on_grab
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RuleTickReport {
    pub applied: usize,
    pub skipped_held: usize,
    pub skipped_world: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneDoc {
    bricks: BTreeMap<BrickId, MvTransformer>,
    #[serde(rename = "spawn")]
    spawn_counters: BTreeMap<ReplicaId, u64>,
}

impl SceneDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bricks(&self) -> &BTreeMap<BrickId, MvTransformer> {
        &self.bricks
    }

    pub fn get(&self, id: &BrickId) -> Option<&MvTransformer> {
        self.bricks.get(id)
    }

    pub fn get_mut(&mut self, id: &BrickId) -> Option<&mut MvTransformer> {
        self.bricks.get_mut(id)
    }

    pub fn len(&self) -> usize {
        self.bricks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bricks.is_empty()
    }

    pub fn spawn_counter(&self, r: &ReplicaId) -> u64 {
        self.spawn_counters.get(r).copied().unwrap_or(0)
    }

    /// Adds a brick at `pose` in local-space mode with empty registers.
    pub fn spawn(&mut self, r: &ReplicaId, pose: TransformSnapshot) -> BrickId {
        let counter = self.spawn_counters.entry(r.clone()).or_insert(0);
        *counter += 1;
        let id = BrickId::new(r.clone(), *counter);
        self.bricks.insert(id.clone(), MvTransformer::new(pose));
        id
    }

    /// Merges one brick's state received on its own.
    pub fn merge_brick(&mut self, id: &BrickId, state: &MvTransformer) -> Result<()> {
        match self.bricks.get_mut(id) {
            Some(mine) => mine.merge(state)?,
            None => {
                self.bricks.insert(id.clone(), state.clone());
            }
        }
        let c = self.spawn_counters.entry(id.spawner.clone()).or_insert(0);
        *c = (*c).max(id.seq);
        Ok(())
    }

    /// Key union with per-brick merge. Validates every shared brick first, so
    /// an identity error leaves `self` untouched.
    pub fn merge(&mut self, other: &SceneDoc) -> Result<()> {
        for (id, theirs) in &other.bricks {
            if let Some(mine) = self.bricks.get(id) {
                if !mine.origin().bit_eq(theirs.origin()) {
                    return Err(Error::Identity(format!("brick {id} has two origins")));
                }
            }
        }
        for (id, theirs) in &other.bricks {
            match self.bricks.get_mut(id) {
                Some(mine) => mine.merge(theirs)?,
                None => {
                    self.bricks.insert(id.clone(), theirs.clone());
                }
            }
        }
        for (r, &n) in &other.spawn_counters {
            let c = self.spawn_counters.entry(r.clone()).or_insert(0);
            *c = (*c).max(n);
        }
        Ok(())
    }

    pub fn merged(&self, other: &SceneDoc) -> Result<SceneDoc> {
        let mut out = self.clone();
        out.merge(other)?;
        Ok(out)
    }

    /// Advances a global rule by `dt` seconds. Bricks in world-space mode are
    /// skipped, as are held bricks when the rule is gated on grabs.
    pub fn rule_tick(
        &mut self,
        rule: &GlobalRule,
        dt: f64,
        stamp: &LamportStamp,
    ) -> Result<RuleTickReport> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Validation(format!("rule tick needs dt > 0, got {dt}")));
        }
        let RuleKind::Gravity { fall_speed } = rule.kind;
        let drop = Vector3::new(0.0, -fall_speed * dt, 0.0);
        let mut report = RuleTickReport::default();
        for mv in self.bricks.values_mut() {
            if rule.gate_on_grab && mv.is_held() {
                report.skipped_held += 1;
            } else if !mv.is_local() {
                report.skipped_world += 1;
            } else {
                mv.apply_offset(&rule.id, drop, UnitQuaternion::IDENTITY, Vector3::ONE)?;
                mv.record_sample(stamp.clone(), mv.resolve_local().position);
                report.applied += 1;
            }
        }
        Ok(report)
    }

    /// Hash of the canonical state; equal digests mean equal replicated state.
    pub fn digest(&self) -> String {
        let mut h = StateHasher::new();
        h.tag(b's').u64(self.bricks.len() as u64);
        for (id, mv) in &self.bricks {
            h.replica(&id.spawner).u64(id.seq);
            mv.hash_into(&mut h);
        }
        h.u64(self.spawn_counters.len() as u64);
        for (r, n) in &self.spawn_counters {
            h.replica(r).u64(*n);
        }
        h.finish()
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (id, mv) in &self.bricks {
            if id.seq > self.spawn_counter(&id.spawner) {
                return Err(Error::Validation(format!(
                    "brick {id} beyond spawn counter {}",
                    self.spawn_counter(&id.spawner)
                )));
            }
            mv.check_invariants()?;
        }
        Ok(())
    }
}
