//! Conflict-free replication of 3D transforms.
//!
//! Two replication styles share the value types in this crate:
//!
//! * [`op`]: operation-based sync. Offsets travel as operations tagged with
//!   vector clocks and are applied in causal order.
//! * [`mv`]: state-based sync. Each object is an [`MvTransformer`] whose full
//!   state is exchanged and merged, either as per-replica offsets
//!   (local-space mode) or as concurrently retained absolute poses resolved
//!   at read time (world-space mode).
//!
//! [`scene::SceneDoc`] maps brick ids to transformers and hosts global rules
//! such as gravity.

pub mod clock;
pub mod digest;
pub mod error;
pub mod id;
pub mod math;
pub mod mv;
pub mod op;
pub mod scene;
pub mod strategy;
pub mod transform;
pub mod wire;

pub use clock::{CausalOrder, VectorClock};
pub use error::{Error, Result};
pub use id::{LamportClock, LamportStamp, ReplicaId};
pub use math::{UnitQuaternion, Vector3};
pub use mv::{MvTransformer, DEFAULT_TOLERANCE};
pub use op::{Operation, OpReplicaState, RotationEffect};
pub use scene::{BrickId, GlobalRule, SceneDoc};
pub use strategy::{Strategy, SwitchConfig, SwitchController};
pub use transform::TransformSnapshot;
pub use wire::SyncMessage;
