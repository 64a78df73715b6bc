//! Randomized checks of the merge laws over reachable replica states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsync_core::{
    BrickId, GlobalRule, LamportClock, MvTransformer, ReplicaId, SceneDoc, TransformSnapshot, UnitQuaternion,
    Vector3,
};

const REPLICAS: [&str; 3] = ["A", "B", "C"];

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3 {
    Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn pose(rng: &mut ChaCha8Rng) -> TransformSnapshot {
    let rot = if rng.gen_bool(0.5) {
        UnitQuaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.5)
            .expect("nondegenerate")
    } else {
        UnitQuaternion::IDENTITY
    };
    let scl = Vector3::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    TransformSnapshot::new(vec3(rng, 5.0), rot, scl).expect("valid pose")
}

fn max_counter(doc: &SceneDoc) -> u64 {
    doc.bricks().values().map(MvTransformer::max_counter).max().unwrap_or(0)
}

/// Three scene replicas after a random history of spawns, moves in both
/// modes, grabs, mode flips, rule ticks and partial merges. Brick `A:1`
/// exists everywhere.
pub fn random_scenes(rng: &mut ChaCha8Rng, steps: usize) -> [SceneDoc; 3] {
    let ids: Vec<ReplicaId> = REPLICAS.iter().map(|r| ReplicaId::new(*r).expect("valid")).collect();
    let mut clocks: Vec<LamportClock> = ids.iter().cloned().map(LamportClock::new).collect();
    let mut docs = [SceneDoc::new(), SceneDoc::new(), SceneDoc::new()];
    let first = docs[0].spawn(&ids[0], pose(rng));
    let seed_state = docs[0].get(&first).expect("spawned").clone();
    for d in &mut docs[1..] {
        d.merge_brick(&first, &seed_state).expect("same origin");
    }
    let rule = GlobalRule::gravity(ReplicaId::new("RULE:gravity").expect("valid"), 1.5, rng.gen_bool(0.5))
        .expect("valid rule");

    for _ in 0..steps {
        let i = rng.gen_range(0..3);
        let observed = max_counter(&docs[i]);
        clocks[i].observe(observed);
        let bricks: Vec<BrickId> = docs[i].bricks().keys().cloned().collect();
        let brick = bricks[rng.gen_range(0..bricks.len())].clone();
        match rng.gen_range(0..100) {
            0..=7 => {
                docs[i].spawn(&ids[i], pose(rng));
            }
            8..=19 => {
                let stamp = clocks[i].tick();
                let holding = rng.gen_bool(0.6);
                docs[i].get_mut(&brick).expect("listed").set_grab(&ids[i], holding, stamp);
            }
            20..=27 => {
                let stamp = clocks[i].tick();
                let local = rng.gen_bool(0.5);
                docs[i].get_mut(&brick).expect("listed").set_mode(local, stamp);
            }
            28..=34 => {
                let stamp = clocks[i].tick();
                docs[i].rule_tick(&rule, rng.gen_range(0.01..0.2), &stamp).expect("valid tick");
            }
            35..=59 => {
                let j = (i + rng.gen_range(1..3)) % 3;
                let src = docs[j].clone();
                if rng.gen_bool(0.5) {
                    docs[i].merge(&src).expect("shared origins");
                } else if let Some((id, mv)) = src.bricks().iter().nth(rng.gen_range(0..src.len())) {
                    docs[i].merge_brick(id, mv).expect("shared origins");
                }
            }
            _ => {
                let target = pose(rng);
                let mv = docs[i].get_mut(&brick).expect("listed");
                if mv.is_local() {
                    mv.local_update(&ids[i], &target, 0.0).expect("local mode");
                } else {
                    let stamp = clocks[i].tick();
                    let ctx = mv.world_context(&ids[i]);
                    mv.world_update(&ids[i], target, stamp, ctx).expect("fresh stamp");
                }
            }
        }
    }
    docs
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LawReport {
    pub triples: usize,
    pub commutativity: usize,
    pub associativity: usize,
    pub idempotence: usize,
}

impl LawReport {
    pub fn failures(&self) -> usize {
        self.commutativity + self.associativity + self.idempotence
    }
}

fn check<T>(
    report: &mut LawReport,
    a: &T,
    b: &T,
    c: &T,
    join: impl Fn(&T, &T) -> T,
    digest: impl Fn(&T) -> String,
) {
    if digest(&join(a, b)) != digest(&join(b, a)) {
        report.commutativity += 1;
    }
    if digest(&join(&join(a, b), c)) != digest(&join(a, &join(b, c))) {
        report.associativity += 1;
    }
    if digest(&join(a, a)) != digest(a) || digest(&join(&join(a, b), b)) != digest(&join(a, b)) {
        report.idempotence += 1;
    }
}

/// Checks commutativity, associativity and idempotence of transformer and
/// scene merges on `triples` random triples each.
pub fn check_semilattice(seed: u64, triples: usize) -> (LawReport, LawReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mv = LawReport { triples, ..LawReport::default() };
    let mut scene = mv.clone();
    let brick = BrickId::new(ReplicaId::new("A").expect("valid"), 1);
    for _ in 0..triples {
        let steps = rng.gen_range(5..40);
        let [a, b, c] = random_scenes(&mut rng, steps);
        check(&mut scene, &a, &b, &c, |x, y| x.merged(y).expect("shared origins"), SceneDoc::digest);
        let (ma, mb, mc) = (&a.bricks()[&brick], &b.bricks()[&brick], &c.bricks()[&brick]);
        check(&mut mv, ma, mb, mc, |x, y| x.merged(y).expect("shared origin"), MvTransformer::digest);
    }
    (mv, scene)
}
