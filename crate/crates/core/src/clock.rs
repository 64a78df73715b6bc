use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::id::ReplicaId;

/// Result of comparing two vector clocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CausalOrder {
    Equal,
    Before,
    After,
    Concurrent,
}

/// Per-replica event counters. Absent entries read as zero and zero
/// entries are never stored, so structural equality is clock equality.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct VectorClock {
    entries: BTreeMap<ReplicaId, u64>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, r: &ReplicaId) -> u64 {
        self.entries.get(r).copied().unwrap_or(0)
    }

    /// Sets a counter; zero removes the entry.
    pub fn set(&mut self, r: ReplicaId, counter: u64) {
        if counter == 0 {
            self.entries.remove(&r);
        } else {
            self.entries.insert(r, counter);
        }
    }

    pub fn increment(&mut self, r: &ReplicaId) -> u64 {
        let next = self
            .get(r)
            .checked_add(1)
            .expect("vector clock counter overflow");
        self.entries.insert(r.clone(), next);
        next
    }

    pub fn incremented(&self, r: &ReplicaId) -> Self {
        let mut out = self.clone();
        out.increment(r);
        out
    }

    pub fn join(&mut self, other: &VectorClock) {
        for (r, &c) in &other.entries {
            let e = self.entries.entry(r.clone()).or_insert(0);
            *e = (*e).max(c);
        }
    }

    pub fn joined(&self, other: &VectorClock) -> Self {
        let mut out = self.clone();
        out.join(other);
        out
    }

    pub fn compare(&self, other: &VectorClock) -> CausalOrder {
        let mut less = false;
        let mut greater = false;
        for r in self.entries.keys().chain(other.entries.keys()) {
            let (a, b) = (self.get(r), other.get(r));
            less |= a < b;
            greater |= a > b;
            if less && greater {
                return CausalOrder::Concurrent;
            }
        }
        match (less, greater) {
            (false, false) => CausalOrder::Equal,
            (true, false) => CausalOrder::Before,
            (false, true) => CausalOrder::After,
            (true, true) => CausalOrder::Concurrent,
        }
    }

    /// `self <= other` pointwise.
    pub fn dominated_by(&self, other: &VectorClock) -> bool {
        self.entries.iter().all(|(r, &c)| other.get(r) >= c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ReplicaId, u64)> {
        self.entries.iter().map(|(r, c)| (r, *c))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<'de> Deserialize<'de> for VectorClock {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let mut entries = BTreeMap::<ReplicaId, u64>::deserialize(d)?;
        entries.retain(|_, c| *c > 0);
        Ok(Self { entries })
    }
}

impl FromIterator<(ReplicaId, u64)> for VectorClock {
    fn from_iter<I: IntoIterator<Item = (ReplicaId, u64)>>(iter: I) -> Self {
        let mut vc = VectorClock::new();
        for (r, c) in iter {
            vc.set(r, c);
        }
        vc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vc(entries: &[(&str, u64)]) -> VectorClock {
        entries
            .iter()
            .map(|(r, c)| (ReplicaId::new(*r).unwrap(), *c))
            .collect()
    }

    fn a() -> ReplicaId {
        ReplicaId::new("A").unwrap()
    }

    #[test]
    fn increment_examples() {
        assert_eq!(vc(&[]).incremented(&a()), vc(&[("A", 1)]));
        assert_eq!(vc(&[("A", 1)]).incremented(&a()), vc(&[("A", 2)]));
        let b = ReplicaId::new("B").unwrap();
        let base = vc(&[("A", 1)]);
        assert_eq!(base.incremented(&b), vc(&[("A", 1), ("B", 1)]));
        assert_eq!(base, vc(&[("A", 1)]));
    }

    #[test]
    fn join_examples() {
        assert_eq!(vc(&[("A", 1)]).joined(&vc(&[("B", 2)])), vc(&[("A", 1), ("B", 2)]));
        assert_eq!(
            vc(&[("A", 3), ("B", 1)]).joined(&vc(&[("A", 1), ("B", 4)])),
            vc(&[("A", 3), ("B", 4)])
        );
        assert_eq!(vc(&[]).joined(&vc(&[])), vc(&[]));
    }

    #[test]
    fn compare_examples() {
        assert_eq!(vc(&[("A", 1)]).compare(&vc(&[("A", 1)])), CausalOrder::Equal);
        assert_eq!(vc(&[("A", 1)]).compare(&vc(&[("A", 2)])), CausalOrder::Before);
        assert_eq!(vc(&[("A", 2)]).compare(&vc(&[("A", 1)])), CausalOrder::After);
        assert_eq!(vc(&[("A", 1)]).compare(&vc(&[("B", 1)])), CausalOrder::Concurrent);
    }

    #[test]
    fn zero_entries_are_dropped() {
        assert_eq!(vc(&[("A", 0)]), vc(&[]));
        let parsed: VectorClock = serde_json::from_str(r#"{"A":0,"B":2}"#).unwrap();
        assert_eq!(parsed, vc(&[("B", 2)]));
        assert_eq!(serde_json::to_string(&parsed).unwrap(), r#"{"B":2}"#);
    }

    fn any_clock() -> impl Strategy<Value = VectorClock> {
        proptest::collection::btree_map("[A-D]", 0u64..5, 0..4).prop_map(|m| {
            m.into_iter()
                .map(|(r, c)| (ReplicaId::new(r).unwrap(), c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn join_is_a_semilattice(x in any_clock(), y in any_clock(), z in any_clock()) {
            prop_assert_eq!(x.joined(&y), y.joined(&x));
            prop_assert_eq!(x.joined(&y).joined(&z), x.joined(&y.joined(&z)));
            prop_assert_eq!(x.joined(&x), x.clone());
        }

        #[test]
        fn join_dominates_inputs(x in any_clock(), y in any_clock()) {
            let j = x.joined(&y);
            prop_assert!(matches!(x.compare(&j), CausalOrder::Equal | CausalOrder::Before));
            prop_assert!(x.dominated_by(&j));
        }

        #[test]
        fn compare_is_antisymmetric(x in any_clock(), y in any_clock()) {
            let flipped = match x.compare(&y) {
                CausalOrder::Before => CausalOrder::After,
                CausalOrder::After => CausalOrder::Before,
                o => o,
            };
            prop_assert_eq!(y.compare(&x), flipped);
        }
    }
}
