//! JSON envelopes for replication traffic. Every message carries a `"t"` tag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mv::MvTransformer;
use crate::op::Operation;
use crate::scene::{BrickId, SceneDoc};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum SyncMessage {
    Op(Operation),
    Mv {
        brick: BrickId,
        #[serde(flatten)]
        state: MvTransformer,
    },
    Scene(SceneDoc),
}

impl SyncMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sync messages always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Validation(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::id::ReplicaId;
    use crate::math::{UnitQuaternion, Vector3};
    use crate::op::OpReplicaState;
    use crate::transform::TransformSnapshot;

    #[test]
    fn op_envelope() {
        let mut s = OpReplicaState::new(ReplicaId::new("A").unwrap());
        let op = s
            .create(Vector3::new(1.0, 0.0, 0.0), UnitQuaternion::IDENTITY, Vector3::ONE)
            .unwrap();
        let json = SyncMessage::Op(op.clone()).to_json();
        assert_eq!(
            json,
            r#"{"t":"op","replica":"A","seq":1,"pos":[1.0,0.0,0.0],"rot":[1.0,0.0,0.0,0.0],"scl":[1.0,1.0,1.0],"clock":{"A":1}}"#
        );
        assert_eq!(SyncMessage::from_json(&json).unwrap(), SyncMessage::Op(op));
    }

    #[test]
    fn mv_envelope_flattens_state() {
        let mut doc = SceneDoc::new();
        let id = doc.spawn(&ReplicaId::new("A").unwrap(), TransformSnapshot::IDENTITY);
        let msg = SyncMessage::Mv {
            brick: id.clone(),
            state: doc.get(&id).unwrap().clone(),
        };
        let v: serde_json::Value = serde_json::from_str(&msg.to_json()).unwrap();
        assert_eq!(v["t"], "mv");
        assert_eq!(v["brick"], "A:1");
        for key in ["origin", "offsets", "world", "grabs", "mode"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(SyncMessage::from_json(&msg.to_json()).unwrap(), msg);
    }

    #[test]
    fn scene_envelope() {
        let mut doc = SceneDoc::new();
        doc.spawn(&ReplicaId::new("A").unwrap(), TransformSnapshot::IDENTITY);
        let json = SyncMessage::Scene(doc.clone()).to_json();
        assert!(json.starts_with(r#"{"t":"scene","bricks":{"A:1":"#));
        assert_eq!(SyncMessage::from_json(&json).unwrap(), SyncMessage::Scene(doc));
        assert!(SyncMessage::from_json(r#"{"t":"nope"}"#).is_err());
    }
}
