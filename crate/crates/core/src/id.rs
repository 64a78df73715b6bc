use std::cmp::Ordering;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Prefix reserved for authors of global rules (gravity and the like).
pub const RULE_PREFIX: &str = "RULE:";

const MAX_REPLICA_ID_BYTES: usize = 64;

/// Identity of a replica. Ordered by byte-lexicographic comparison.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ReplicaId(String);

impl ReplicaId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("replica id is empty".into()));
        }
        if id.len() > MAX_REPLICA_ID_BYTES {
            return Err(Error::Validation(format!(
                "replica id is {} bytes, limit is {MAX_REPLICA_ID_BYTES}",
                id.len()
            )));
        }
        Ok(Self(id))
    }

    /// Like [`ReplicaId::new`] but refuses the rule-author prefix.
    pub fn user(id: impl Into<String>) -> Result<Self> {
        let id = Self::new(id)?;
        if id.is_rule() {
            return Err(Error::Validation(format!(
                "replica id {id} uses the reserved {RULE_PREFIX} prefix"
            )));
        }
        Ok(id)
    }

    pub fn is_rule(&self) -> bool {
        self.0.starts_with(RULE_PREFIX)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ReplicaId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ReplicaId::new(String::deserialize(d)?).map_err(D::Error::custom)
    }
}

impl TryFrom<&str> for ReplicaId {
    type Error = Error;
    fn try_from(s: &str) -> Result<Self> {
        ReplicaId::new(s)
    }
}

/// Logical timestamp: counter first, then replica id as tie-break.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LamportStamp {
    pub counter: u64,
    pub replica: ReplicaId,
}

impl LamportStamp {
    pub fn new(counter: u64, replica: ReplicaId) -> Self {
        Self { counter, replica }
    }
}

impl Ord for LamportStamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.counter
            .cmp(&other.counter)
            .then_with(|| self.replica.cmp(&other.replica))
    }
}

impl PartialOrd for LamportStamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LamportStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.counter, self.replica)
    }
}

impl Serialize for LamportStamp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.counter, &self.replica).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LamportStamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (counter, replica) = <(u64, ReplicaId)>::deserialize(d)?;
        Ok(Self { counter, replica })
    }
}

/// Stamp source owned by a single replica.
#[derive(Clone, Debug)]
pub struct LamportClock {
    replica: ReplicaId,
    counter: u64,
}

impl LamportClock {
    pub fn new(replica: ReplicaId) -> Self {
        Self { replica, counter: 0 }
    }

    pub fn replica(&self) -> &ReplicaId {
        &self.replica
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Issues a stamp strictly greater than anything issued or observed so far.
    pub fn tick(&mut self) -> LamportStamp {
        self.counter = self.counter.checked_add(1).expect("lamport counter overflow");
        LamportStamp::new(self.counter, self.replica.clone())
    }

    pub fn observe(&mut self, counter: u64) {
        self.counter = self.counter.max(counter);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    #[test]
    fn replica_id_limits() {
        assert!(ReplicaId::new("").is_err());
        assert!(ReplicaId::new("x".repeat(64)).is_ok());
        assert!(ReplicaId::new("x".repeat(65)).is_err());
        assert!(ReplicaId::user("RULE:gravity").is_err());
        assert!(r("RULE:gravity").is_rule());
        assert!(serde_json::from_str::<ReplicaId>("\"\"").is_err());
    }

    #[test]
    fn stamp_order_counter_then_replica() {
        assert!(LamportStamp::new(1, r("B")) < LamportStamp::new(2, r("A")));
        assert!(LamportStamp::new(2, r("A")) < LamportStamp::new(2, r("B")));
        let json = serde_json::to_string(&LamportStamp::new(3, r("A"))).unwrap();
        assert_eq!(json, r#"[3,"A"]"#);
    }

    #[test]
    fn clock_ticks_past_observed() {
        let mut c = LamportClock::new(r("A"));
        assert_eq!(c.tick().counter, 1);
        c.observe(10);
        assert_eq!(c.tick(), LamportStamp::new(11, r("A")));
        c.observe(3);
        assert_eq!(c.tick().counter, 12);
    }

    proptest! {
        #[test]
        fn stamp_order_is_total(a in 0u64..4, b in 0u64..4, ra in "[A-C]", rb in "[A-C]") {
            let x = LamportStamp::new(a, r(&ra));
            let y = LamportStamp::new(b, r(&rb));
            if x != y {
                prop_assert!((x < y) ^ (y < x));
            } else {
                prop_assert_eq!(x.cmp(&y), Ordering::Equal);
            }
        }
    }
}
