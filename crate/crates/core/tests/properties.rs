//! Cross-module properties, with nalgebra as the quaternion oracle.

use nalgebra as na;
use proptest::prelude::*;
use xsync_core::{
    LamportClock, MvTransformer, Operation, OpReplicaState, ReplicaId, SceneDoc, Strategy as Resolve, TransformSnapshot,
    UnitQuaternion, Vector3,
};

fn quat() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("nondegenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-2)
}

fn vec3() -> impl Strategy<Value = Vector3> {
    (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn oracle((w, x, y, z): (f64, f64, f64, f64)) -> na::UnitQuaternion<f64> {
    na::UnitQuaternion::from_quaternion(na::Quaternion::new(w, x, y, z))
}

fn ours((w, x, y, z): (f64, f64, f64, f64)) -> UnitQuaternion {
    UnitQuaternion::new(w, x, y, z).unwrap()
}

fn same_rotation(q: UnitQuaternion, o: &na::UnitQuaternion<f64>) -> bool {
    let c = o.quaternion();
    let dot = q.w() * c.w + q.x() * c.i + q.y() * c.j + q.z() * c.k;
    (dot.abs() - 1.0).abs() < 1e-12
}

fn close(v: Vector3, o: na::Vector3<f64>) -> bool {
    (v.x - o.x).abs() < 1e-9 && (v.y - o.y).abs() < 1e-9 && (v.z - o.z).abs() < 1e-9
}

proptest! {
    #[test]
    fn canonical_form_preserves_rotation(q in quat(), v in vec3()) {
        let o = oracle(q);
        let (w, x, y, z) = q;
        for c in [ours(q), ours((-w, -x, -y, -z))] {
            prop_assert!(same_rotation(c, &o));
            prop_assert!(c.w() >= 0.0);
            let r = c.rotate(v);
            prop_assert!(close(r, o * na::Vector3::new(v.x, v.y, v.z)));
        }
        prop_assert_eq!(ours(q), ours((-w, -x, -y, -z)));
    }

    #[test]
    fn algebra_matches_oracle(a in quat(), b in quat()) {
        let (qa, qb) = (ours(a), ours(b));
        let (oa, ob) = (oracle(a), oracle(b));
        prop_assert!(same_rotation(qa.compose(qb), &(oa * ob)));
        prop_assert!(same_rotation(qa.inverse(), &oa.inverse()));
        prop_assert!((qa.angle_to(qb) - oa.angle_to(&ob)).abs() < 1e-6);
    }
}

#[derive(Clone, Debug)]
enum Step {
    Grab(usize, bool),
    Mode(usize, bool),
    Write(usize, Vector3),
    Merge(usize, usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0..3usize, any::<bool>()).prop_map(|(i, h)| Step::Grab(i, h)),
        (0..3usize, any::<bool>()).prop_map(|(i, l)| Step::Mode(i, l)),
        (0..3usize, vec3()).prop_map(|(i, v)| Step::Write(i, v)),
        (0..3usize, 0..3usize).prop_map(|(i, j)| Step::Merge(i, j)),
        (0..3usize, 0..3usize).prop_map(|(i, j)| Step::Merge(i, j)),
    ]
}

/// Three replicas of one transformer after `steps`.
fn replay(steps: &[Step]) -> Vec<MvTransformer> {
    let ids: Vec<ReplicaId> = ["A", "B", "C"].iter().map(|s| ReplicaId::new(*s).unwrap()).collect();
    let mut clocks: Vec<LamportClock> = ids.iter().cloned().map(LamportClock::new).collect();
    let mut mvs = vec![MvTransformer::new(TransformSnapshot::at(Vector3::new(1.0, 2.0, 3.0))); 3];
    for s in steps {
        match s {
            Step::Grab(i, h) => {
                clocks[*i].observe(mvs[*i].max_counter());
                let st = clocks[*i].tick();
                mvs[*i].set_grab(&ids[*i], *h, st);
            }
            Step::Mode(i, l) => {
                clocks[*i].observe(mvs[*i].max_counter());
                let st = clocks[*i].tick();
                mvs[*i].set_mode(*l, st);
            }
            Step::Write(i, v) => {
                let target = TransformSnapshot::at(*v);
                if mvs[*i].is_local() {
                    mvs[*i].local_update(&ids[*i], &target, 0.0).unwrap();
                } else {
                    clocks[*i].observe(mvs[*i].max_counter());
                    let st = clocks[*i].tick();
                    let ctx = mvs[*i].world_context(&ids[*i]);
                    mvs[*i].world_update(&ids[*i], target, st, ctx).unwrap();
                }
            }
            Step::Merge(i, j) => {
                let src = mvs[*j].clone();
                mvs[*i].merge(&src).unwrap();
            }
        }
    }
    mvs
}

fn join(a: &MvTransformer, b: &MvTransformer) -> MvTransformer {
    a.merged(b).unwrap()
}

proptest! {
    #[test]
    fn transformer_merge_is_a_semilattice(steps in prop::collection::vec(step(), 0..40)) {
        let m = replay(&steps);
        let (a, b, c) = (&m[0], &m[1], &m[2]);
        prop_assert_eq!(join(a, b).digest(), join(b, a).digest());
        prop_assert_eq!(join(&join(a, b), c).digest(), join(a, &join(b, c)).digest());
        prop_assert_eq!(join(a, a).digest(), a.digest());
        for mv in &m {
            mv.check_invariants().unwrap();
        }
    }

    #[test]
    fn pairwise_exchange_converges(steps in prop::collection::vec(step(), 0..40), order in any::<u64>()) {
        let mut m = replay(&steps);
        // Two rounds of all-pairs exchange in a seeded order reach a fixpoint.
        let mut pairs: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        pairs.rotate_left((order % 6) as usize);
        for _ in 0..2 {
            for &(i, j) in &pairs {
                let src = m[j].clone();
                m[i].merge(&src).unwrap();
            }
        }
        prop_assert_eq!(m[0].digest(), m[1].digest());
        prop_assert_eq!(m[1].digest(), m[2].digest());
    }

    #[test]
    fn resolve_is_pure(steps in prop::collection::vec(step(), 0..40)) {
        let m = replay(&steps);
        let back: MvTransformer = serde_json::from_str(&serde_json::to_string(&m[0]).unwrap()).unwrap();
        prop_assert_eq!(back.digest(), m[0].digest());
        for s in [Resolve::Lww, Resolve::Average, Resolve::Constraint] {
            prop_assert!(m[0].resolve(s).bit_eq(&m[0].clone().resolve(s)));
            prop_assert!(m[0].resolve(s).bit_eq(&back.resolve(s)));
        }
    }

    #[test]
    fn local_resolve_ignores_merge_order(steps in prop::collection::vec(step(), 0..40)) {
        let m = replay(&steps);
        let abc = join(&join(&m[0], &m[1]), &m[2]);
        let cba = join(&join(&m[2], &m[1]), &m[0]);
        prop_assert!(abc.resolve_local().bit_eq(&cba.resolve_local()));
    }

    #[test]
    fn scenes_only_grow(n_a in 0..4usize, n_b in 0..4usize) {
        let (a, b) = (ReplicaId::new("A").unwrap(), ReplicaId::new("B").unwrap());
        let mut da = SceneDoc::new();
        let mut db = SceneDoc::new();
        for k in 0..n_a {
            da.spawn(&a, TransformSnapshot::at(Vector3::new(k as f64, 0.0, 0.0)));
        }
        for k in 0..n_b {
            db.spawn(&b, TransformSnapshot::at(Vector3::new(0.0, k as f64, 0.0)));
        }
        let before = da.len();
        da.merge(&db).unwrap();
        prop_assert!(da.len() >= before);
        prop_assert_eq!(da.len(), n_a + n_b);
        prop_assert_eq!(da.merged(&db).unwrap().digest(), da.digest());
    }
}

fn translation(s: &mut OpReplicaState, v: Vector3) -> Operation {
    s.create(v, UnitQuaternion::IDENTITY, Vector3::new(1.0, 1.0, 1.0)).unwrap()
}

/// Whether `op` could be applied right now at `s`.
fn ready(s: &OpReplicaState, op: &Operation) -> bool {
    op.seq == s.clock().get(&op.replica) + 1
        && op.dep_clock.iter().filter(|(r, _)| **r != op.replica).all(|(r, c)| s.clock().get(r) >= c)
}

proptest! {
    #[test]
    fn op_delivery_is_idempotent_and_drains(
        lens in (1..5usize, 1..5usize),
        deliveries in prop::collection::vec(0..100usize, 1..40),
    ) {
        let mut a = OpReplicaState::new(ReplicaId::new("A").unwrap());
        let mut b = OpReplicaState::new(ReplicaId::new("B").unwrap());
        let mut ops: Vec<Operation> = (0..lens.0).map(|k| translation(&mut a, Vector3::new(0.5 * k as f64, 0.0, 0.0))).collect();
        // B builds on A's first op.
        b.apply(ops[0].clone()).unwrap();
        ops.extend((0..lens.1).map(|k| translation(&mut b, Vector3::new(0.0, 0.25 * k as f64, 0.0))));

        let mut obs = OpReplicaState::new(ReplicaId::new("O").unwrap());
        for d in deliveries {
            obs.apply(ops[d % ops.len()].clone()).unwrap();
            for p in obs.pending() {
                prop_assert!(!ready(&obs, p), "ready op left pending: {:?}", p);
            }
        }
        for op in &ops {
            obs.apply(op.clone()).unwrap();
        }
        prop_assert!(obs.pending().is_empty());
        let once = obs.digest();
        for op in &ops {
            obs.apply(op.clone()).unwrap();
        }
        prop_assert_eq!(obs.digest(), once);
    }
}
