//! Replica actors driven by scenario actions and sync messages.

use std::collections::{BTreeMap, BTreeSet};

use xsync_core::scene::RuleTickReport;
use xsync_core::{
    BrickId, GlobalRule, LamportClock, LamportStamp, MvTransformer, OpReplicaState, Operation,
    ReplicaId, SceneDoc, Strategy, SwitchConfig, SwitchController, SyncMessage, TransformSnapshot,
    UnitQuaternion, Vector3, DEFAULT_TOLERANCE,
};

use crate::error::{HarnessError, Result};
use crate::scenario::{ActionKind, StrategySpec};

/// Key of the single object replicated in op scenarios.
pub const OP_OBJECT: &str = "obj";

#[derive(Clone, Debug)]
pub enum StrategyState {
    Fixed(Strategy),
    Dynamic(SwitchController),
}

impl StrategyState {
    pub fn from_spec(spec: &StrategySpec) -> Result<Self> {
        Ok(match spec {
            StrategySpec::Fixed(s) => StrategyState::Fixed(*s),
            StrategySpec::Dynamic { dynamic } => {
                StrategyState::Dynamic(SwitchController::new(*dynamic)?)
            }
        })
    }

    pub fn current(&self) -> Strategy {
        match self {
            StrategyState::Fixed(s) => *s,
            StrategyState::Dynamic(c) => c.current(),
        }
    }

    fn observe(&mut self, conflicts: usize, now: &LamportStamp) {
        if let StrategyState::Dynamic(c) = self {
            c.step(conflicts.min(u32::MAX as usize) as u32, now);
        }
    }

    pub fn switches(&self) -> u64 {
        match self {
            StrategyState::Fixed(_) => 0,
            StrategyState::Dynamic(c) => c.switches(),
        }
    }
}

/// What a replica did with an action.
#[derive(Clone, Debug, PartialEq)]
pub enum Applied {
    Changed,
    /// Accepted, but the state did not change (for example a move within tolerance).
    NoOp,
    Spawned(BrickId),
    /// The target brick has not reached this replica yet.
    MissingBrick(BrickId),
}

pub trait SyncReplica {
    fn id(&self) -> &ReplicaId;
    fn apply(&mut self, action: &ActionKind) -> Result<Applied>;
    /// Sync messages to broadcast; `full` includes unchanged state.
    fn outgoing(&mut self, full: bool) -> Vec<SyncMessage>;
    fn receive(&mut self, msg: SyncMessage) -> Result<()>;
    fn digest(&self) -> String;
    fn resolved(&self) -> BTreeMap<String, TransformSnapshot>;
    fn check_invariants(&self) -> Result<()>;
    fn strategy(&self) -> Strategy;
    fn strategy_switches(&self) -> u64;
}

/// State-based replica holding a scene of MV-Transformers.
#[derive(Clone, Debug)]
pub struct StateReplica {
    id: ReplicaId,
    doc: SceneDoc,
    clock: LamportClock,
    strategy: StrategyState,
    dirty: BTreeSet<BrickId>,
    tolerance: f64,
}

impl StateReplica {
    pub fn new(id: ReplicaId, strategy: StrategyState) -> Self {
        Self {
            clock: LamportClock::new(id.clone()),
            id,
            doc: SceneDoc::new(),
            strategy,
            dirty: BTreeSet::new(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn doc(&self) -> &SceneDoc {
        &self.doc
    }

    pub fn lamport(&self) -> u64 {
        self.clock.counter()
    }

    pub fn set_strategy(&mut self, s: Strategy) {
        self.strategy = StrategyState::Fixed(s);
    }

    pub fn set_dynamic(&mut self, cfg: SwitchConfig) -> Result<()> {
        self.strategy = StrategyState::Dynamic(SwitchController::new(cfg)?);
        Ok(())
    }

    pub fn resolve(&self, brick: &BrickId) -> Option<TransformSnapshot> {
        self.doc.get(brick).map(|mv| mv.resolve(self.strategy.current()))
    }

    pub fn spawn(&mut self, pose: TransformSnapshot) -> BrickId {
        let id = self.doc.spawn(&self.id, pose);
        self.dirty.insert(id.clone());
        id
    }

    fn brick_mut(&mut self, brick: &BrickId) -> Option<&mut MvTransformer> {
        self.doc.get_mut(brick)
    }

    pub fn grab(&mut self, brick: &BrickId, holding: bool) -> Result<Applied> {
        if self.doc.get(brick).is_none() {
            return Ok(Applied::MissingBrick(brick.clone()));
        }
        let stamp = self.clock.tick();
        let id = self.id.clone();
        let changed = self.brick_mut(brick).expect("checked").set_grab(&id, holding, stamp);
        Ok(self.touched(brick, changed))
    }

    pub fn set_mode(&mut self, brick: &BrickId, local: bool) -> Result<Applied> {
        if self.doc.get(brick).is_none() {
            return Ok(Applied::MissingBrick(brick.clone()));
        }
        let stamp = self.clock.tick();
        let changed = self.brick_mut(brick).expect("checked").set_mode(local, stamp);
        Ok(self.touched(brick, changed))
    }

    /// Moves toward `target` through whichever mode the brick is in.
    pub fn move_to(&mut self, brick: &BrickId, target: TransformSnapshot) -> Result<Applied> {
        let Some(mv) = self.doc.get(brick) else {
            return Ok(Applied::MissingBrick(brick.clone()));
        };
        let changed = if mv.is_local() {
            let (id, tol) = (self.id.clone(), self.tolerance);
            self.brick_mut(brick).expect("checked").local_update(&id, &target, tol)?
        } else {
            let ctx = mv.world_context(&self.id);
            let stamp = self.clock.tick();
            let id = self.id.clone();
            self.brick_mut(brick)
                .expect("checked")
                .world_update(&id, target, stamp, ctx)?;
            true
        };
        Ok(self.touched(brick, changed))
    }

    pub fn rule_tick(&mut self, rule: &GlobalRule, dt: f64) -> Result<RuleTickReport> {
        let stamp = self.clock.tick();
        let report = self.doc.rule_tick(rule, dt, &stamp)?;
        if report.applied > 0 {
            for (id, mv) in self.doc.bricks() {
                if mv.is_local() && !(rule.gate_on_grab() && mv.is_held()) {
                    self.dirty.insert(id.clone());
                }
            }
        }
        Ok(report)
    }

    fn touched(&mut self, brick: &BrickId, changed: bool) -> Applied {
        if changed {
            self.dirty.insert(brick.clone());
            Applied::Changed
        } else {
            Applied::NoOp
        }
    }

    fn merge_one(&mut self, brick: &BrickId, state: &MvTransformer) -> Result<()> {
        self.clock.observe(state.max_counter());
        let before = self.doc.get(brick).cloned();
        self.doc.merge_brick(brick, state)?;
        let strategy = self.strategy.current();
        let mv = self.doc.get(brick).expect("just merged");
        if before.as_ref() != Some(mv) {
            let conflicts = mv.conflicts();
            let pos = mv.resolve(strategy).position;
            let stamp = self.clock.tick();
            self.doc
                .get_mut(brick)
                .expect("just merged")
                .record_sample(stamp.clone(), pos);
            self.strategy.observe(conflicts, &stamp);
        }
        Ok(())
    }
}

fn pose_from(base: TransformSnapshot, pos: Vector3, rot: Option<UnitQuaternion>, scl: Option<Vector3>) -> Result<TransformSnapshot> {
    Ok(TransformSnapshot::new(
        pos,
        rot.unwrap_or(base.rotation),
        scl.unwrap_or(base.scale),
    )?)
}

impl SyncReplica for StateReplica {
    fn id(&self) -> &ReplicaId {
        &self.id
    }

    fn apply(&mut self, action: &ActionKind) -> Result<Applied> {
        match action {
            ActionKind::Spawn { pos, rot, scl } => {
                let pose = pose_from(TransformSnapshot::IDENTITY, pos.unwrap_or(Vector3::ZERO), *rot, *scl)?;
                Ok(Applied::Spawned(self.spawn(pose)))
            }
            ActionKind::Grab { brick } => self.grab(brick, true),
            ActionKind::Release { brick } => self.grab(brick, false),
            ActionKind::Mode { brick, local } => self.set_mode(brick, *local),
            ActionKind::Move { brick, to, by, rot, scl } => {
                let brick = brick.as_ref().ok_or_else(|| HarnessError::Scenario("move needs a brick".into()))?;
                let Some(current) = self.resolve(brick) else {
                    return Ok(Applied::MissingBrick(brick.clone()));
                };
                let pos = match (to, by) {
                    (Some(to), _) => *to,
                    (None, Some(by)) => current.position + *by,
                    (None, None) => current.position,
                };
                let target = pose_from(current, pos, *rot, *scl)?;
                self.move_to(brick, target)
            }
            ActionKind::Strategy { strategy } => {
                self.set_strategy(*strategy);
                Ok(Applied::Changed)
            }
            ActionKind::RuleTick { rule, fall_speed, dt, gate } => {
                let rule = GlobalRule::gravity(rule.clone(), *fall_speed, *gate)?;
                let report = self.rule_tick(&rule, *dt)?;
                Ok(if report.applied > 0 { Applied::Changed } else { Applied::NoOp })
            }
            ActionKind::Close { .. } | ActionKind::Partition { .. } => Ok(Applied::NoOp),
        }
    }

    fn outgoing(&mut self, full: bool) -> Vec<SyncMessage> {
        let ids: Vec<BrickId> = if full {
            self.doc.bricks().keys().cloned().collect()
        } else {
            self.dirty.iter().cloned().collect()
        };
        self.dirty.clear();
        ids.into_iter()
            .filter_map(|id| {
                let state = self.doc.get(&id)?.clone();
                Some(SyncMessage::Mv { brick: id, state })
            })
            .collect()
    }

    fn receive(&mut self, msg: SyncMessage) -> Result<()> {
        match msg {
            SyncMessage::Mv { brick, state } => self.merge_one(&brick, &state),
            SyncMessage::Scene(doc) => {
                for (id, mv) in doc.bricks() {
                    self.merge_one(id, mv)?;
                }
                Ok(())
            }
            SyncMessage::Op(op) => Err(HarnessError::Scenario(format!(
                "state replica {} received an operation from {}",
                self.id, op.replica
            ))),
        }
    }

    fn digest(&self) -> String {
        self.doc.digest()
    }

    fn resolved(&self) -> BTreeMap<String, TransformSnapshot> {
        let s = self.strategy.current();
        self.doc.bricks().iter().map(|(id, mv)| (id.to_string(), mv.resolve(s))).collect()
    }

    fn check_invariants(&self) -> Result<()> {
        Ok(self.doc.check_invariants()?)
    }

    fn strategy(&self) -> Strategy {
        self.strategy.current()
    }

    fn strategy_switches(&self) -> u64 {
        self.strategy.switches()
    }
}

/// Operation-based replica of a single object.
///
/// Every authored operation is kept so that full rounds can resend them;
/// receivers discard duplicates.
#[derive(Clone, Debug)]
pub struct OpReplica {
    state: OpReplicaState,
    log: Vec<Operation>,
    unsent: usize,
}

impl OpReplica {
    pub fn new(id: ReplicaId) -> Self {
        Self {
            state: OpReplicaState::new(id),
            log: Vec::new(),
            unsent: 0,
        }
    }

    pub fn state(&self) -> &OpReplicaState {
        &self.state
    }
}

impl SyncReplica for OpReplica {
    fn id(&self) -> &ReplicaId {
        self.state.replica()
    }

    /// `rot` and `scl` are applied as a rotation delta and a scale factor.
    fn apply(&mut self, action: &ActionKind) -> Result<Applied> {
        let ActionKind::Move { to, by, rot, scl, .. } = action else {
            return Ok(Applied::NoOp);
        };
        let current = self.state.resolve().position;
        let offset = match (to, by) {
            (Some(to), _) => *to - current,
            (None, Some(by)) => *by,
            (None, None) => Vector3::ZERO,
        };
        let op = self.state.create(
            offset,
            rot.unwrap_or(UnitQuaternion::IDENTITY),
            scl.unwrap_or(Vector3::ONE),
        )?;
        self.log.push(op);
        self.unsent += 1;
        Ok(Applied::Changed)
    }

    fn outgoing(&mut self, full: bool) -> Vec<SyncMessage> {
        let from = if full { 0 } else { self.log.len() - self.unsent };
        self.unsent = 0;
        self.log[from..].iter().cloned().map(SyncMessage::Op).collect()
    }

    fn receive(&mut self, msg: SyncMessage) -> Result<()> {
        match msg {
            SyncMessage::Op(op) => {
                self.state.apply(op)?;
                Ok(())
            }
            _ => Err(HarnessError::Scenario(format!(
                "op replica {} received state",
                self.state.replica()
            ))),
        }
    }

    fn digest(&self) -> String {
        self.state.digest()
    }

    fn resolved(&self) -> BTreeMap<String, TransformSnapshot> {
        BTreeMap::from([(OP_OBJECT.to_string(), self.state.resolve())])
    }

    fn check_invariants(&self) -> Result<()> {
        self.state.resolve().validate()?;
        Ok(())
    }

    fn strategy(&self) -> Strategy {
        Strategy::Lww
    }

    fn strategy_switches(&self) -> u64 {
        0
    }
}
