//! Exhaustive delivery orders for operation-based replicas.

use xsync_core::{Operation, OpReplicaState, ReplicaId, TransformSnapshot, UnitQuaternion, Vector3};

use crate::error::Result;

/// Every merge of `a` and `b` that keeps each sequence in order.
pub fn fifo_interleavings<T: Clone>(a: &[T], b: &[T]) -> Vec<Vec<T>> {
    fn go<T: Clone>(a: &[T], b: &[T], prefix: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        if a.is_empty() && b.is_empty() {
            out.push(prefix.clone());
            return;
        }
        if let Some((x, rest)) = a.split_first() {
            prefix.push(x.clone());
            go(rest, b, prefix, out);
            prefix.pop();
        }
        if let Some((y, rest)) = b.split_first() {
            prefix.push(y.clone());
            go(a, rest, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(a, b, &mut Vec::with_capacity(a.len() + b.len()), &mut out);
    out
}

/// Applies `ops` in order to a fresh observer.
pub fn deliver(ops: &[Operation]) -> Result<OpReplicaState> {
    let mut s = OpReplicaState::new(ReplicaId::new("observer")?);
    for op in ops {
        s.apply(op.clone())?;
    }
    Ok(s)
}

/// Ops authored by A and B where B first observed `seen` of A's ops.
pub fn authored(a_offsets: &[Vector3], b_offsets: &[Vector3], seen: usize) -> Result<(Vec<Operation>, Vec<Operation>)> {
    let mut a = OpReplicaState::new(ReplicaId::new("A")?);
    let mut b = OpReplicaState::new(ReplicaId::new("B")?);
    let id = UnitQuaternion::IDENTITY;
    let one = Vector3::new(1.0, 1.0, 1.0);
    let a_ops = a_offsets
        .iter()
        .map(|d| a.create(*d, id, one))
        .collect::<xsync_core::Result<Vec<_>>>()?;
    for op in &a_ops[..seen] {
        b.apply(op.clone())?;
    }
    let b_ops = b_offsets
        .iter()
        .map(|d| b.create(*d, id, one))
        .collect::<xsync_core::Result<Vec<_>>>()?;
    Ok((a_ops, b_ops))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InterleavingReport {
    pub configurations: usize,
    pub orders: usize,
    /// Orders whose observer digest differed from the first order's.
    pub digest_mismatches: usize,
    /// Orders that left operations buffered.
    pub stuck: usize,
    pub max_position_error: f64,
}

/// For every `na, nb <= max_ops` and every causal prefix B observed, delivers
/// all FIFO interleavings to fresh observers and compares them. Offsets come
/// from `offset(author, index)`.
pub fn translation_convergence(max_ops: usize, offset: impl Fn(usize, usize) -> Vector3) -> Result<InterleavingReport> {
    let mut r = InterleavingReport::default();
    for na in 0..=max_ops {
        for nb in 0..=max_ops {
            let a_off: Vec<Vector3> = (0..na).map(|k| offset(0, k)).collect();
            let b_off: Vec<Vector3> = (0..nb).map(|k| offset(1, k)).collect();
            let expected: Vector3 = a_off.iter().chain(&b_off).fold(Vector3::ZERO, |s, d| s + *d);
            for seen in 0..=na {
                let (a_ops, b_ops) = authored(&a_off, &b_off, seen)?;
                r.configurations += 1;
                let mut first: Option<String> = None;
                for order in fifo_interleavings(&a_ops, &b_ops) {
                    r.orders += 1;
                    let s = deliver(&order)?;
                    if !s.pending().is_empty() {
                        r.stuck += 1;
                    }
                    let err = s.resolve().position.max_abs_diff(expected);
                    r.max_position_error = r.max_position_error.max(err);
                    let d = s.digest();
                    match &first {
                        None => first = Some(d),
                        Some(f) if *f != d => r.digest_mismatches += 1,
                        Some(_) => {}
                    }
                }
            }
        }
    }
    Ok(r)
}

/// Resolved snapshots of two observers receiving A's and B's concurrent
/// rotations in opposite orders.
pub fn concurrent_rotations(ra: UnitQuaternion, rb: UnitQuaternion) -> Result<(TransformSnapshot, TransformSnapshot)> {
    let mut a = OpReplicaState::new(ReplicaId::new("A")?);
    let mut b = OpReplicaState::new(ReplicaId::new("B")?);
    let one = Vector3::new(1.0, 1.0, 1.0);
    let oa = a.create(Vector3::ZERO, ra, one)?;
    let ob = b.create(Vector3::ZERO, rb, one)?;
    let ab = deliver(&[oa.clone(), ob.clone()])?.resolve();
    let ba = deliver(&[ob, oa])?.resolve();
    Ok((ab, ba))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaving_counts_are_binomial() {
        let a = [1, 2, 3];
        let b = [10, 20];
        let all = fifo_interleavings(&a, &b);
        assert_eq!(all.len(), 10);
        for o in &all {
            let xs: Vec<_> = o.iter().filter(|v| **v < 10).collect();
            assert_eq!(xs, vec![&1, &2, &3]);
        }
        assert_eq!(fifo_interleavings::<u8>(&[], &[]).len(), 1);
    }

    #[test]
    fn causal_prefix_is_respected() {
        let d = Vector3::new(0.5, 0.0, 0.0);
        let (a_ops, b_ops) = authored(&[d, d], &[d], 2).unwrap();
        assert_eq!(b_ops[0].dep_clock.get(&ReplicaId::new("A").unwrap()), 2);
        // B's op first: buffered until both of A's arrive.
        let s = deliver(&[b_ops[0].clone(), a_ops[0].clone()]).unwrap();
        assert_eq!(s.pending().len(), 1);
    }

    #[test]
    fn dyadic_translations_converge_exactly() {
        let r = translation_convergence(2, |who, k| Vector3::new(0.25 * (k + 1) as f64, -0.5 * who as f64, 0.0)).unwrap();
        assert_eq!(r.digest_mismatches, 0);
        assert_eq!(r.stuck, 0);
        assert_eq!(r.max_position_error, 0.0);
    }
}
