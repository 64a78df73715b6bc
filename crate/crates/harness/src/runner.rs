//! Runs a scenario over the simulated network and collects a report.

use std::collections::BTreeMap;

use log::{debug, warn};
use xsync_core::{SyncMessage, Vector3};
use xsync_net::rtt::{Hop, ProbeConfig, RttProbe};
use xsync_net::simnet::{ChannelId, SimError, SimEvent, SimWorld, TimerToken};

use crate::error::Result;
use crate::mesh::SignalMesh;
use crate::replica::{Applied, OpReplica, StateReplica, StrategyState, SyncReplica};
use crate::report::{Counters, RttRow, RunReport, TimelineEntry};
use crate::scenario::{Action, ActionKind, CrdtKind, Scenario, RELAY_NODE};

const ACTION_TIMER: u32 = 1;
const EXCHANGE_TIMER: u32 = 2;

enum Links {
    Mesh {
        channels: BTreeMap<(usize, usize), ChannelId>,
        signaling: SignalMesh,
    },
    Relay {
        legs: Vec<ChannelId>,
    },
}

struct Ctx {
    scenario: Scenario,
    replicas: Vec<Box<dyn SyncReplica>>,
    links: Links,
    probes: Vec<(String, RttProbe)>,
    rounds: Vec<u64>,
    settling: bool,
    timeline: Vec<TimelineEntry>,
    last_pos: BTreeMap<(usize, String), Vector3>,
    counters: Counters,
    invariant_errors: Vec<String>,
}

pub struct Runner {
    world: SimWorld,
    ctx: Ctx,
}

impl Runner {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let mut world = SimWorld::new(scenario.seed);
        let n = scenario.replicas.len();
        let mut replicas: Vec<Box<dyn SyncReplica>> = Vec::with_capacity(n);
        for r in &scenario.replicas {
            world.add_node(r.as_str());
            replicas.push(match scenario.crdt {
                CrdtKind::State => Box::new(StateReplica::new(
                    r.clone(),
                    StrategyState::from_spec(&scenario.strategy)?,
                )),
                CrdtKind::Op => Box::new(OpReplica::new(r.clone())),
            });
        }

        let name = |i: usize| scenario.replicas[i].as_str();
        let mut probes = Vec::new();
        let probe_cfg = scenario.probe_period_ms.map(|period_ms| ProbeConfig {
            period_ms,
            ..ProbeConfig::default()
        });
        let links = if scenario.topology.is_relay() {
            let mut legs = Vec::with_capacity(n);
            for i in 0..n {
                let cfg = scenario.link_for(name(i), RELAY_NODE);
                legs.push(world.connect(name(i), RELAY_NODE, cfg)?);
            }
            if let Some(cfg) = &probe_cfg {
                for a in 0..n {
                    for b in a + 1..n {
                        let hops = vec![
                            Hop { channel: legs[a], from: name(a).into(), to: RELAY_NODE.into() },
                            Hop { channel: legs[b], from: RELAY_NODE.into(), to: name(b).into() },
                        ];
                        let id = probes.len() as u32;
                        probes.push((Scenario::leg_name(name(a), name(b)), RttProbe::new(id, hops, cfg.clone())?));
                    }
                }
            }
            Links::Relay { legs }
        } else {
            let mut channels = BTreeMap::new();
            for a in 0..n {
                for b in a + 1..n {
                    let cfg = scenario.link_for(name(a), name(b));
                    let ch = world.connect(name(a), name(b), cfg)?;
                    channels.insert((a, b), ch);
                    if let Some(cfg) = &probe_cfg {
                        let hops = vec![Hop { channel: ch, from: name(a).into(), to: name(b).into() }];
                        let id = probes.len() as u32;
                        probes.push((Scenario::leg_name(name(a), name(b)), RttProbe::new(id, hops, cfg.clone())?));
                    }
                }
            }
            Links::Mesh {
                channels,
                signaling: SignalMesh::new(n),
            }
        };

        for (i, _) in scenario.script.iter().enumerate() {
            let a = &scenario.script[i];
            world.schedule_timer(a.at, a.replica.as_str(), TimerToken { owner: ACTION_TIMER, value: i as u64 });
        }
        for i in 0..n {
            world.schedule_timer(
                scenario.exchange.period_ms,
                name(i),
                TimerToken { owner: EXCHANGE_TIMER, value: i as u64 },
            );
        }
        for (_, p) in &probes {
            p.start(&mut world, 0.0);
        }

        Ok(Self {
            world,
            ctx: Ctx {
                rounds: vec![0; n],
                scenario,
                replicas,
                links,
                probes,
                settling: false,
                timeline: Vec::new(),
                last_pos: BTreeMap::new(),
                counters: Counters::default(),
                invariant_errors: Vec::new(),
            },
        })
    }

    /// Runs the script, then full exchange rounds until the replicas agree
    /// or the settle budget is spent.
    pub fn run(mut self) -> RunReport {
        let duration = self.ctx.scenario.duration_ms;
        let period = self.ctx.scenario.exchange.period_ms;
        let deadline = duration + self.ctx.scenario.exchange.settle_ms;
        let ctx = &mut self.ctx;
        self.world.run_until(duration, |w, ev| ctx.handle(w, ev));
        ctx.settling = true;
        let mut t = duration;
        let all_open = |w: &SimWorld| w.channel_ids().all(|c| w.is_open(c).unwrap_or(true));
        while !(ctx.converged() && all_open(&self.world)) && t < deadline {
            t = (t + period).min(deadline);
            self.world.run_until(t, |w, ev| ctx.handle(w, ev));
        }
        self.ctx.finish(&self.world)
    }
}

/// Parses and runs a scenario.
pub fn run_scenario(scenario: Scenario) -> Result<RunReport> {
    Ok(Runner::new(scenario)?.run())
}

impl Ctx {
    fn converged(&self) -> bool {
        let first = self.replicas[0].digest();
        self.replicas[1..].iter().all(|r| r.digest() == first)
    }

    fn index_of(&self, node: &str) -> Option<usize> {
        self.scenario.replicas.iter().position(|r| r.as_str() == node)
    }

    fn handle(&mut self, w: &mut SimWorld, ev: SimEvent) {
        if self.probes.iter_mut().any(|(_, p)| p.handle(w, &ev)) {
            return;
        }
        match ev {
            SimEvent::Timer { token, at_ms, .. } => match token.owner {
                ACTION_TIMER => {
                    let a = self.scenario.script[token.value as usize].clone();
                    self.run_action(w, &a, at_ms);
                }
                EXCHANGE_TIMER => {
                    let i = token.value as usize;
                    self.exchange(w, i);
                    w.schedule_timer(at_ms + self.scenario.exchange.period_ms, self.scenario.replicas[i].as_str(), token);
                }
                other => warn!("timer for unknown owner {other}"),
            },
            SimEvent::Delivery { channel, from, to, payload, at_ms, .. } => {
                if to == RELAY_NODE {
                    self.forward(w, channel, &from, payload);
                } else if let Some(j) = self.index_of(&to) {
                    self.deliver(j, &payload, at_ms);
                }
            }
            SimEvent::ChannelClosed { channel, at_ms } => {
                debug!("channel {channel:?} closed at {at_ms}");
                if let Links::Mesh { channels, signaling } = &mut self.links {
                    if let Some((&(a, b), _)) = channels.iter().find(|(_, c)| **c == channel) {
                        signaling.mark_down(a, b);
                    }
                }
            }
            SimEvent::ChannelReopened { channel, at_ms } => {
                debug!("channel {channel:?} reopened at {at_ms}");
                match &mut self.links {
                    Links::Mesh { channels, signaling } => {
                        if let Some((&(a, b), _)) = channels.iter().find(|(_, c)| **c == channel) {
                            if signaling.renegotiate(a, b) {
                                self.counters.renegotiations += 1;
                            }
                        }
                    }
                    Links::Relay { .. } => self.counters.renegotiations += 1,
                }
            }
        }
    }

    fn channel_toward(&self, i: usize, peer: Option<&xsync_core::ReplicaId>) -> Option<ChannelId> {
        match &self.links {
            Links::Relay { legs } => Some(legs[i]),
            Links::Mesh { channels, .. } => {
                let j = self.index_of(peer?.as_str())?;
                channels.get(&(i.min(j), i.max(j))).copied()
            }
        }
    }

    fn run_action(&mut self, w: &mut SimWorld, a: &Action, at_ms: f64) {
        let i = self.index_of(a.replica.as_str()).expect("validated");
        let result = match &a.kind {
            ActionKind::Close { peer } => match self.channel_toward(i, peer.as_ref()) {
                Some(ch) => w.close_channel(ch).map(|_| Applied::Changed).map_err(Into::into),
                None => Ok(Applied::NoOp),
            },
            ActionKind::Partition { peer, for_ms } => match self.channel_toward(i, peer.as_ref()) {
                Some(ch) => w
                    .add_partition(ch, at_ms, at_ms + for_ms)
                    .map(|_| Applied::Changed)
                    .map_err(Into::into),
                None => Ok(Applied::NoOp),
            },
            kind => self.replicas[i].apply(kind),
        };
        match result {
            Ok(Applied::Changed | Applied::Spawned(_)) => self.counters.actions_applied += 1,
            Ok(Applied::NoOp) => self.counters.actions_noop += 1,
            Ok(Applied::MissingBrick(b)) => {
                debug!("{} at {at_ms}: brick {b} not present yet", a.replica);
                self.counters.actions_skipped += 1;
            }
            Err(e) => {
                warn!("{} at {at_ms}: {} failed: {e}", a.replica, a.kind.name());
                self.counters.actions_failed += 1;
            }
        }
        self.sample(i, at_ms);
    }

    fn exchange(&mut self, w: &mut SimWorld, i: usize) {
        let full_every = self.scenario.exchange.full_every;
        let full = self.settling || self.rounds[i] % full_every == full_every - 1;
        self.rounds[i] += 1;
        let msgs = self.replicas[i].outgoing(full);
        if msgs.is_empty() {
            return;
        }
        let targets: Vec<ChannelId> = match &self.links {
            Links::Relay { legs } => vec![legs[i]],
            Links::Mesh { channels, signaling } => channels
                .iter()
                .filter(|(&(a, b), _)| (a == i || b == i) && signaling.is_up(a, b))
                .map(|(_, c)| *c)
                .collect(),
        };
        let from = self.scenario.replicas[i].as_str().to_string();
        for m in msgs {
            let bytes = m.to_json().into_bytes();
            for &ch in &targets {
                self.send(w, ch, &from, bytes.clone());
            }
        }
    }

    fn send(&mut self, w: &mut SimWorld, ch: ChannelId, from: &str, bytes: Vec<u8>) {
        match w.send(ch, from, bytes) {
            Ok(_) => {}
            Err(SimError::PayloadTooLarge { len }) => warn!("{from}: {len}-byte message rejected"),
            Err(e) => self.invariant_errors.push(format!("send from {from}: {e}")),
        }
    }

    fn forward(&mut self, w: &mut SimWorld, inbound: ChannelId, from: &str, payload: Vec<u8>) {
        let Links::Relay { legs } = &self.links else {
            return;
        };
        let outs: Vec<ChannelId> = legs.iter().copied().filter(|c| *c != inbound).collect();
        debug!("relay forwarding {} bytes from {from}", payload.len());
        for ch in outs {
            self.send(w, ch, RELAY_NODE, payload.clone());
        }
    }

    fn deliver(&mut self, j: usize, payload: &[u8], at_ms: f64) {
        let text = String::from_utf8_lossy(payload);
        let msg = match SyncMessage::from_json(&text) {
            Ok(m) => m,
            Err(e) => {
                self.invariant_errors.push(format!("undecodable message at {}: {e}", self.scenario.replicas[j]));
                return;
            }
        };
        if let Err(e) = self.replicas[j].receive(msg) {
            self.invariant_errors.push(format!("merge at {}: {e}", self.scenario.replicas[j]));
        }
        self.sample(j, at_ms);
    }

    fn sample(&mut self, i: usize, at_ms: f64) {
        if !self.scenario.timeline {
            return;
        }
        for (brick, snap) in self.replicas[i].resolved() {
            let key = (i, brick);
            if self.last_pos.get(&key) != Some(&snap.position) {
                self.timeline.push(TimelineEntry {
                    t_ms: at_ms,
                    replica: self.scenario.replicas[i].to_string(),
                    brick: key.1.clone(),
                    pos: snap.position,
                });
                self.last_pos.insert(key, snap.position);
            }
        }
    }

    fn finish(mut self, w: &SimWorld) -> RunReport {
        for r in &self.replicas {
            if let Err(e) = r.check_invariants() {
                self.invariant_errors.push(format!("{}: {e}", r.id()));
            }
        }
        for ch in w.channel_ids() {
            let s = w.stats(ch).expect("own channel");
            if !s.is_conserved() {
                self.invariant_errors.push(format!("channel {ch:?} stats not conserved: {s:?}"));
            }
        }
        if let Links::Mesh { signaling, .. } = &self.links {
            for (a, b) in signaling.missing_pairs() {
                self.invariant_errors.push(format!(
                    "signaling: {} and {} are not connected",
                    self.scenario.replicas[a], self.scenario.replicas[b]
                ));
            }
            self.counters.signal_messages = signaling.signal_messages();
        }
        let total = w.total_stats();
        let c = &mut self.counters;
        c.sent = total.sent;
        c.delivered = total.delivered;
        c.lost = total.lost;
        c.rejected = total.rejected;
        c.duplicated = total.duplicated;
        c.in_flight = total.in_flight;
        c.closures = total.closures;
        c.strategy_switches = self.replicas.iter().map(|r| r.strategy_switches()).sum();

        let path = if self.scenario.topology.is_relay() { "via relay" } else { "direct" };
        let rtt = self
            .probes
            .iter()
            .map(|(pair, p)| RttRow {
                pair: pair.clone(),
                path: path.into(),
                instant_ms: p.instantaneous(),
                mean_ms: p.window_mean(w.now()),
                samples: p.samples().len(),
            })
            .collect();

        RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            topology: self.scenario.topology.to_string(),
            crdt: match self.scenario.crdt {
                CrdtKind::Op => "op".into(),
                CrdtKind::State => "state".into(),
            },
            converged: self.converged(),
            invariant_errors: self.invariant_errors,
            end_ms: w.now(),
            digests: self.replicas.iter().map(|r| (r.id().to_string(), r.digest())).collect(),
            strategies: self.replicas.iter().map(|r| (r.id().to_string(), r.strategy())).collect(),
            resolved: self.replicas.iter().map(|r| (r.id().to_string(), r.resolved())).collect(),
            rtt,
            counters: self.counters,
            timeline: self.timeline,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_replay_resolves_minus_one() {
        let report = run_scenario(Scenario::bundled("fig-mv-replay").unwrap()).unwrap();
        assert!(report.ok(), "{}", report.to_json());
        for poses in report.resolved.values() {
            assert_eq!(poses["A:1"].position, Vector3::new(-1.0, 0.0, 0.0));
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let run = || run_scenario(Scenario::bundled("oscillation-lww").unwrap()).unwrap().to_json();
        assert_eq!(run(), run());
    }
}
