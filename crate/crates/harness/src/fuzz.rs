//! Seeded convergence fuzzing with greedy failure minimization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsync_core::{BrickId, ReplicaId, Strategy, SwitchConfig, UnitQuaternion, Vector3};
use xsync_net::LinkConfig;

use crate::error::Result;
use crate::report::RunReport;
use crate::runner::run_scenario;
use crate::scenario::{Action, ActionKind, CrdtKind, ExchangeConfig, Scenario, StrategySpec, Topology};

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub min_replicas: usize,
    pub max_replicas: usize,
    pub min_updates: usize,
    pub max_updates: usize,
    pub duration_ms: f64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            min_replicas: 3,
            max_replicas: 5,
            min_updates: 200,
            max_updates: 260,
            duration_ms: 2000.0,
        }
    }
}

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3 {
    Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion {
    let axis = loop {
        let v = vec3(rng, 1.0);
        if v.norm() > 0.1 {
            break v;
        }
    };
    UnitQuaternion::from_axis_angle(axis, rng.gen_range(-PI..PI)).expect("nonzero axis")
}

fn link(rng: &mut ChaCha8Rng, duration: f64) -> LinkConfig {
    let mut cfg = LinkConfig {
        one_way_delay_ms: rng.gen_range(1.0..40.0),
        jitter_ms: rng.gen_range(0.0..15.0),
        loss_rate: rng.gen_range(0.0..0.3),
        duplicate_rate: rng.gen_range(0.0..0.2),
        ordered: rng.gen_bool(0.5),
        ..LinkConfig::default()
    };
    if rng.gen_bool(0.3) {
        cfg.closures.push(rng.gen_range(0.0..duration));
    }
    if rng.gen_bool(0.3) {
        let start = rng.gen_range(0.0..duration);
        cfg.partitions.push((start, start + rng.gen_range(10.0..400.0)));
    }
    cfg
}

/// Builds a random scenario: 3 to 5 replicas, at least 200 updates mixing
/// spawns, grabs, moves in both modes, mode flips and rule ticks, over lossy,
/// duplicating and reordering links.
pub fn generate(seed: u64, cfg: &FuzzConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_replicas..=cfg.max_replicas);
    let replicas: Vec<ReplicaId> = (0..n)
        .map(|i| ReplicaId::new(((b'A' + i as u8) as char).to_string()).expect("valid"))
        .collect();
    let topology = *[Topology::Direct, Topology::Direct, Topology::LocalRelay, Topology::RemoteRelay]
        .choose(&mut rng)
        .expect("nonempty");

    let mut links = BTreeMap::new();
    links.insert("default".to_string(), link(&mut rng, cfg.duration_ms));
    if topology == Topology::Direct {
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.4) {
                    links.insert(
                        Scenario::leg_name(replicas[a].as_str(), replicas[b].as_str()),
                        link(&mut rng, cfg.duration_ms),
                    );
                }
            }
        }
    }

    let strategy = match rng.gen_range(0..5) {
        0 => StrategySpec::Fixed(Strategy::Lww),
        1 => StrategySpec::Fixed(Strategy::Average),
        2 => StrategySpec::Fixed(Strategy::Constraint),
        3 => StrategySpec::Fixed(Strategy::DeadReckoning { horizon: rng.gen_range(1..4) }),
        _ => StrategySpec::Dynamic { dynamic: SwitchConfig::default() },
    };

    let updates = rng.gen_range(cfg.min_updates..=cfg.max_updates);
    let mut times: Vec<f64> = (0..updates).map(|_| rng.gen_range(0.0..cfg.duration_ms)).collect();
    times.sort_by(f64::total_cmp);
    times[0] = 0.0;

    let mut spawned: Vec<BrickId> = Vec::new();
    let mut counters = vec![0u64; n];
    let mut script = Vec::with_capacity(updates);
    for (k, at) in times.into_iter().enumerate() {
        let i = rng.gen_range(0..n);
        let replica = replicas[i].clone();
        let roll = rng.gen_range(0..100);
        let kind = if k == 0 || spawned.is_empty() || roll < 8 {
            counters[i] += 1;
            spawned.push(BrickId::new(replica.clone(), counters[i]));
            ActionKind::Spawn {
                pos: Some(vec3(&mut rng, 5.0)),
                rot: rng.gen_bool(0.3).then(|| rotation(&mut rng)),
                scl: None,
            }
        } else {
            let brick = spawned.choose(&mut rng).expect("nonempty").clone();
            match roll {
                8..=19 => ActionKind::Grab { brick },
                20..=29 => ActionKind::Release { brick },
                30..=39 => ActionKind::Mode { brick, local: rng.gen_bool(0.5) },
                40..=49 => ActionKind::RuleTick {
                    rule: ReplicaId::new("RULE:gravity").expect("valid"),
                    fall_speed: rng.gen_range(0.0..3.0),
                    dt: rng.gen_range(0.01..0.2),
                    gate: rng.gen_bool(0.7),
                },
                50..=51 if topology == Topology::Direct && n > 1 => {
                    let j = (i + rng.gen_range(1..n)) % n;
                    ActionKind::Close { peer: Some(replicas[j].clone()) }
                }
                50..=51 => ActionKind::Close { peer: None },
                _ => {
                    let relative = rng.gen_bool(0.5);
                    let delta = vec3(&mut rng, 2.0);
                    ActionKind::Move {
                        brick: Some(brick),
                        to: (!relative).then_some(delta),
                        by: relative.then_some(delta),
                        rot: rng.gen_bool(0.3).then(|| rotation(&mut rng)),
                        scl: rng.gen_bool(0.2).then(|| {
                            Vector3::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0))
                        }),
                    }
                }
            }
        };
        script.push(Action { at, replica, kind });
    }

    Scenario {
        name: format!("fuzz-{seed}"),
        seed,
        topology,
        links,
        crdt: CrdtKind::State,
        strategy,
        replicas,
        duration_ms: cfg.duration_ms,
        exchange: ExchangeConfig {
            period_ms: 50.0,
            full_every: 5,
            settle_ms: 60_000.0,
        },
        timeline: false,
        probe_period_ms: None,
        script,
    }
}

#[derive(Debug)]
pub struct FuzzFailure {
    pub seed: u64,
    pub minimized: Scenario,
    pub report: RunReport,
}

fn fails(s: &Scenario) -> bool {
    run_scenario(s.clone()).map(|r| !r.ok()).unwrap_or(true)
}

/// Drops runs of script actions, halving the run length down to single
/// actions, for as long as the scenario keeps failing.
pub fn minimize(mut s: Scenario) -> Scenario {
    let mut chunk = s.script.len().div_ceil(2).max(1);
    loop {
        let mut end = s.script.len();
        while end > 0 {
            let start = end.saturating_sub(chunk);
            let mut candidate = s.clone();
            candidate.script.drain(start..end);
            if fails(&candidate) {
                s = candidate;
            }
            end = start;
        }
        if chunk == 1 {
            return s;
        }
        chunk = chunk.div_ceil(2);
    }
}

/// Runs one seed. Failures come back minimized.
pub fn run_seed(seed: u64, cfg: &FuzzConfig) -> Result<std::result::Result<RunReport, FuzzFailure>> {
    let scenario = generate(seed, cfg);
    let report = run_scenario(scenario.clone())?;
    if report.ok() {
        return Ok(Ok(report));
    }
    let minimized = minimize(scenario);
    let report = run_scenario(minimized.clone())?;
    Ok(Err(FuzzFailure { seed, minimized, report }))
}

/// Writes the minimized scenario and its report for replay with `harness run`.
pub fn dump_failure(f: &FuzzFailure, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("fuzz-failure-{}.json", f.seed));
    std::fs::write(&path, f.minimized.to_json_pretty())?;
    std::fs::write(dir.join(format!("fuzz-failure-{}.report.json", f.seed)), f.report.to_json())?;
    Ok(path)
}
