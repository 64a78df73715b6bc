//! Deterministic discrete-event network.
//!
//! Channels connect two nodes and carry byte payloads with a configured
//! one-way delay, uniform jitter, loss, optional duplication, partitions and
//! scheduled closures. Events run in `(due time, insertion order)` order, and
//! every random draw comes from one seeded generator, so a seed and a
//! sequence of calls fully determine the trace.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest payload a data channel accepts.
pub const MAX_PAYLOAD_BYTES: usize = 16 * 1024;

/// Pause between a channel closing and its renegotiated reopening.
pub const DEFAULT_RENEGOTIATION_MS: f64 = 250.0;

pub type NodeId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown channel {0:?}")]
    UnknownChannel(ChannelId),
    #[error("node {node} is not an endpoint of channel {channel:?}")]
    NotAnEndpoint { channel: ChannelId, node: NodeId },
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD_BYTES}-byte limit")]
    PayloadTooLarge { len: usize },
    #[error("nothing scheduled")]
    NothingScheduled,
    #[error("invalid link config: {0}")]
    InvalidConfig(String),
}

pub type SimResult<T> = Result<T, SimError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct LinkConfig {
    pub one_way_delay_ms: f64,
    /// Delay varies uniformly within `±jitter_ms`.
    pub jitter_ms: f64,
    pub loss_rate: f64,
    /// Probability that a delivered message arrives a second time.
    pub duplicate_rate: f64,
    /// Source-FIFO delivery per direction.
    pub ordered: bool,
    /// Half-open `[start, end)` intervals during which sends are lost.
    pub partitions: Vec<(f64, f64)>,
    pub closures: Vec<f64>,
    pub renegotiation_ms: f64,
    /// Serialization cost added per payload byte.
    pub per_byte_ms: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            one_way_delay_ms: 0.0,
            jitter_ms: 0.0,
            loss_rate: 0.0,
            duplicate_rate: 0.0,
            ordered: true,
            partitions: Vec::new(),
            closures: Vec::new(),
            renegotiation_ms: DEFAULT_RENEGOTIATION_MS,
            per_byte_ms: 0.0,
        }
    }
}

impl LinkConfig {
    pub fn with_delay(one_way_delay_ms: f64) -> Self {
        Self {
            one_way_delay_ms,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.one_way_delay_ms) || !nonneg(self.jitter_ms) {
            return bad("delay and jitter must be finite and nonnegative".into());
        }
        if !nonneg(self.per_byte_ms) || !nonneg(self.renegotiation_ms) {
            return bad("per-byte cost and renegotiation delay must be nonnegative".into());
        }
        for (name, p) in [("lossRate", self.loss_rate), ("duplicateRate", self.duplicate_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let mut prev_end = f64::NEG_INFINITY;
        for &(start, end) in &self.partitions {
            if !(start < end) || start < prev_end {
                return bad(format!(
                    "partitions must be sorted, disjoint, nonempty intervals; got [{start}, {end})"
                ));
            }
            prev_end = end;
        }
        if self.closures.iter().any(|c| !c.is_finite()) {
            return bad("closure times must be finite".into());
        }
        Ok(())
    }

    fn partitioned_at(&self, t: f64) -> bool {
        self.partitions.iter().any(|&(s, e)| s <= t && t < e)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    /// Every transmission attempt, including rejected ones and duplicates.
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub rejected: u64,
    pub in_flight: u64,
    pub duplicated: u64,
    pub closures: u64,
    pub reopens: u64,
}

impl ChannelStats {
    pub fn is_conserved(&self) -> bool {
        self.sent == self.delivered + self.lost + self.rejected + self.in_flight
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerToken {
    pub owner: u32,
    pub value: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimEvent {
    Delivery {
        channel: ChannelId,
        from: NodeId,
        to: NodeId,
        payload: Vec<u8>,
        sent_at_ms: f64,
        at_ms: f64,
    },
    ChannelClosed {
        channel: ChannelId,
        at_ms: f64,
    },
    ChannelReopened {
        channel: ChannelId,
        at_ms: f64,
    },
    Timer {
        node: NodeId,
        token: TimerToken,
        at_ms: f64,
    },
}

impl SimEvent {
    pub fn at_ms(&self) -> f64 {
        match self {
            SimEvent::Delivery { at_ms, .. }
            | SimEvent::ChannelClosed { at_ms, .. }
            | SimEvent::ChannelReopened { at_ms, .. }
            | SimEvent::Timer { at_ms, .. } => *at_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SendOutcome {
    Scheduled { due_ms: f64 },
    Lost,
}

#[derive(Clone, Debug)]
struct Channel {
    ends: [NodeId; 2],
    config: LinkConfig,
    open: bool,
    epoch: u64,
    last_due: [f64; 2],
    stats: ChannelStats,
}

#[derive(Clone, Debug)]
enum EventKind {
    Deliver {
        channel: ChannelId,
        dir: usize,
        payload: Vec<u8>,
        sent_at_ms: f64,
        epoch: u64,
    },
    Close(ChannelId),
    Reopen(ChannelId),
    Timer(NodeId, TimerToken),
}

#[derive(Clone, Debug)]
struct Scheduled {
    due: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .due
            .total_cmp(&self.due)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    clock_ms: f64,
    seed: u64,
    rng: ChaCha8Rng,
    nodes: Vec<NodeId>,
    channels: Vec<Channel>,
    queue: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl SimWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            clock_ms: 0.0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            channels: Vec::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> f64 {
        self.clock_ms
    }

    pub fn add_node(&mut self, id: impl Into<NodeId>) {
        let id = id.into();
        if !self.nodes.contains(&id) {
            self.nodes.push(id);
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Opens a channel between two nodes and schedules its configured closures.
    pub fn connect(&mut self, a: &str, b: &str, config: LinkConfig) -> SimResult<ChannelId> {
        config.validate()?;
        self.add_node(a);
        self.add_node(b);
        let id = ChannelId(self.channels.len());
        for &at in &config.closures {
            self.push(at.max(self.clock_ms), EventKind::Close(id));
        }
        self.channels.push(Channel {
            ends: [a.to_string(), b.to_string()],
            config,
            open: true,
            epoch: 0,
            last_due: [f64::NEG_INFINITY; 2],
            stats: ChannelStats::default(),
        });
        Ok(id)
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> {
        (0..self.channels.len()).map(ChannelId)
    }

    pub fn endpoints(&self, ch: ChannelId) -> SimResult<(&NodeId, &NodeId)> {
        let c = self.channel(ch)?;
        Ok((&c.ends[0], &c.ends[1]))
    }

    pub fn link_config(&self, ch: ChannelId) -> SimResult<&LinkConfig> {
        Ok(&self.channel(ch)?.config)
    }

    pub fn is_open(&self, ch: ChannelId) -> SimResult<bool> {
        Ok(self.channel(ch)?.open)
    }

    pub fn stats(&self, ch: ChannelId) -> SimResult<&ChannelStats> {
        Ok(&self.channel(ch)?.stats)
    }

    pub fn total_stats(&self) -> ChannelStats {
        let mut t = ChannelStats::default();
        for c in &self.channels {
            let s = &c.stats;
            t.sent += s.sent;
            t.delivered += s.delivered;
            t.lost += s.lost;
            t.rejected += s.rejected;
            t.in_flight += s.in_flight;
            t.duplicated += s.duplicated;
            t.closures += s.closures;
            t.reopens += s.reopens;
        }
        t
    }

    fn channel(&self, ch: ChannelId) -> SimResult<&Channel> {
        self.channels.get(ch.0).ok_or(SimError::UnknownChannel(ch))
    }

    fn push(&mut self, due: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { due, seq, kind });
    }

    pub fn schedule_timer(&mut self, at_ms: f64, node: &str, token: TimerToken) {
        self.push(at_ms.max(self.clock_ms), EventKind::Timer(node.to_string(), token));
    }

    /// Closes a channel now; it reopens after the link's renegotiation delay.
    pub fn close_channel(&mut self, ch: ChannelId) -> SimResult<()> {
        self.channel(ch)?;
        self.push(self.clock_ms, EventKind::Close(ch));
        Ok(())
    }

    /// Drops every send on `ch` during `[start_ms, end_ms)`, merging with
    /// overlapping configured partitions.
    pub fn add_partition(&mut self, ch: ChannelId, start_ms: f64, end_ms: f64) -> SimResult<()> {
        if !(start_ms < end_ms) {
            return Err(SimError::InvalidConfig(format!(
                "empty partition [{start_ms}, {end_ms})"
            )));
        }
        let c = self.channels.get_mut(ch.0).ok_or(SimError::UnknownChannel(ch))?;
        let mut parts = std::mem::take(&mut c.config.partitions);
        parts.push((start_ms, end_ms));
        parts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (s, e) in parts {
            match c.config.partitions.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => c.config.partitions.push((s, e)),
            }
        }
        Ok(())
    }

    /// Sends `payload` from `from` over `ch`.
    ///
    /// Oversized payloads are counted as rejected and returned as errors.
    /// Sends on a closed or partitioned channel, or dropped by the loss draw,
    /// are counted as lost.
    pub fn send(&mut self, ch: ChannelId, from: &str, payload: Vec<u8>) -> SimResult<SendOutcome> {
        let now = self.clock_ms;
        let c = self.channels.get_mut(ch.0).ok_or(SimError::UnknownChannel(ch))?;
        let dir = c
            .ends
            .iter()
            .position(|e| e == from)
            .ok_or_else(|| SimError::NotAnEndpoint {
                channel: ch,
                node: from.to_string(),
            })?;
        c.stats.sent += 1;
        if payload.len() > MAX_PAYLOAD_BYTES {
            c.stats.rejected += 1;
            return Err(SimError::PayloadTooLarge { len: payload.len() });
        }
        if !c.open || c.config.partitioned_at(now) {
            c.stats.lost += 1;
            return Ok(SendOutcome::Lost);
        }
        let cfg = c.config.clone();
        if cfg.loss_rate > 0.0 && self.rng.gen_bool(cfg.loss_rate) {
            self.channels[ch.0].stats.lost += 1;
            return Ok(SendOutcome::Lost);
        }
        let copies = if cfg.duplicate_rate > 0.0 && self.rng.gen_bool(cfg.duplicate_rate) {
            2
        } else {
            1
        };
        let mut first_due = None;
        for copy in 0..copies {
            let jitter = if cfg.jitter_ms > 0.0 {
                self.rng.gen_range(-cfg.jitter_ms..=cfg.jitter_ms)
            } else {
                0.0
            };
            let delay =
                (cfg.one_way_delay_ms + jitter + cfg.per_byte_ms * payload.len() as f64).max(0.0);
            let c = &mut self.channels[ch.0];
            let mut due = now + delay;
            if cfg.ordered {
                due = due.max(c.last_due[dir]);
                c.last_due[dir] = due;
            }
            if copy > 0 {
                c.stats.sent += 1;
                c.stats.duplicated += 1;
            }
            c.stats.in_flight += 1;
            let epoch = c.epoch;
            first_due.get_or_insert(due);
            self.push(
                due,
                EventKind::Deliver {
                    channel: ch,
                    dir,
                    payload: payload.clone(),
                    sent_at_ms: now,
                    epoch,
                },
            );
        }
        Ok(SendOutcome::Scheduled {
            due_ms: first_due.expect("at least one copy"),
        })
    }

    pub fn next_due(&self) -> Option<f64> {
        self.queue.peek().map(|s| s.due)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Runs the earliest event. Messages whose channel closed while they were
    /// in flight are counted lost and yield `None`.
    pub fn step(&mut self) -> SimResult<Option<SimEvent>> {
        let ev = self.queue.pop().ok_or(SimError::NothingScheduled)?;
        self.clock_ms = self.clock_ms.max(ev.due);
        let at_ms = self.clock_ms;
        let out = match ev.kind {
            EventKind::Deliver {
                channel,
                dir,
                payload,
                sent_at_ms,
                epoch,
            } => {
                let c = &mut self.channels[channel.0];
                c.stats.in_flight -= 1;
                if c.epoch != epoch || !c.open {
                    c.stats.lost += 1;
                    None
                } else {
                    c.stats.delivered += 1;
                    Some(SimEvent::Delivery {
                        channel,
                        from: c.ends[dir].clone(),
                        to: c.ends[1 - dir].clone(),
                        payload,
                        sent_at_ms,
                        at_ms,
                    })
                }
            }
            EventKind::Close(ch) => {
                let c = &mut self.channels[ch.0];
                if !c.open {
                    None
                } else {
                    c.open = false;
                    c.epoch += 1;
                    c.last_due = [f64::NEG_INFINITY; 2];
                    c.stats.closures += 1;
                    let reopen_at = at_ms + c.config.renegotiation_ms;
                    self.push(reopen_at, EventKind::Reopen(ch));
                    Some(SimEvent::ChannelClosed { channel: ch, at_ms })
                }
            }
            EventKind::Reopen(ch) => {
                let c = &mut self.channels[ch.0];
                c.open = true;
                c.stats.reopens += 1;
                Some(SimEvent::ChannelReopened { channel: ch, at_ms })
            }
            EventKind::Timer(node, token) => Some(SimEvent::Timer { node, token, at_ms }),
        };
        Ok(out)
    }

    /// Runs every event due at or before `t_ms`, passing each to `handle`,
    /// then advances the clock to `t_ms`. The handler may send and schedule.
    pub fn run_until<F>(&mut self, t_ms: f64, mut handle: F)
    where
        F: FnMut(&mut SimWorld, SimEvent),
    {
        while self.next_due().is_some_and(|d| d <= t_ms) {
            if let Ok(Some(ev)) = self.step() {
                handle(self, ev);
            }
        }
        self.clock_ms = self.clock_ms.max(t_ms);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deliveries(w: &mut SimWorld) -> Vec<(f64, Vec<u8>)> {
        let mut out = Vec::new();
        while !w.is_idle() {
            if let Some(SimEvent::Delivery { at_ms, payload, .. }) = w.step().unwrap() {
                out.push((at_ms, payload));
            }
        }
        out
    }

    #[test]
    fn fixed_delay() {
        let mut w = SimWorld::new(1);
        let ch = w.connect("a", "b", LinkConfig::with_delay(9.0)).unwrap();
        w.send(ch, "a", b"x".to_vec()).unwrap();
        assert_eq!(deliveries(&mut w), vec![(9.0, b"x".to_vec())]);
    }

    #[test]
    fn total_loss() {
        let mut w = SimWorld::new(1);
        let cfg = LinkConfig {
            loss_rate: 1.0,
            ..LinkConfig::with_delay(1.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        for _ in 0..10 {
            assert_eq!(w.send(ch, "a", vec![0]).unwrap(), SendOutcome::Lost);
        }
        assert!(deliveries(&mut w).is_empty());
        assert_eq!(w.stats(ch).unwrap().lost, 10);
    }

    #[test]
    fn payload_cap() {
        let mut w = SimWorld::new(1);
        let ch = w.connect("a", "b", LinkConfig::with_delay(1.0)).unwrap();
        assert_eq!(
            w.send(ch, "a", vec![0; MAX_PAYLOAD_BYTES + 1]),
            Err(SimError::PayloadTooLarge { len: 16385 })
        );
        assert!(w.send(ch, "a", vec![0; MAX_PAYLOAD_BYTES]).is_ok());
        let s = w.stats(ch).unwrap();
        assert_eq!((s.sent, s.rejected, s.in_flight), (2, 1, 1));
        assert!(s.is_conserved());
    }

    #[test]
    fn ordered_link_is_fifo_under_jitter() {
        let mut w = SimWorld::new(7);
        let cfg = LinkConfig {
            jitter_ms: 8.0,
            ..LinkConfig::with_delay(10.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        let mut got = Vec::new();
        for i in 0..50u8 {
            w.send(ch, "a", vec![i]).unwrap();
            w.run_until(w.now() + 0.5, |_, ev| {
                if let SimEvent::Delivery { payload, .. } = ev {
                    got.push(payload[0]);
                }
            });
        }
        got.extend(deliveries(&mut w).into_iter().map(|(_, p)| p[0]));
        assert_eq!(got, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn unordered_link_can_reorder() {
        let mut w = SimWorld::new(7);
        let cfg = LinkConfig {
            jitter_ms: 8.0,
            ordered: false,
            ..LinkConfig::with_delay(10.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        let mut got = Vec::new();
        for i in 0..50u8 {
            w.send(ch, "a", vec![i]).unwrap();
            w.run_until(w.now() + 0.5, |_, ev| {
                if let SimEvent::Delivery { payload, .. } = ev {
                    got.push(payload[0]);
                }
            });
        }
        got.extend(deliveries(&mut w).into_iter().map(|(_, p)| p[0]));
        assert_ne!(got, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn earliest_event_first() {
        let mut w = SimWorld::new(1);
        let slow = w.connect("a", "b", LinkConfig::with_delay(5.0)).unwrap();
        let fast = w.connect("a", "c", LinkConfig::with_delay(3.0)).unwrap();
        w.send(slow, "a", b"slow".to_vec()).unwrap();
        w.send(fast, "a", b"fast".to_vec()).unwrap();
        let got = deliveries(&mut w);
        assert_eq!(got[0], (3.0, b"fast".to_vec()));
        assert_eq!(got[1], (5.0, b"slow".to_vec()));
    }

    #[test]
    fn closure_loses_later_sends_and_reopens() {
        let mut w = SimWorld::new(1);
        let cfg = LinkConfig {
            closures: vec![10.0],
            ..LinkConfig::with_delay(2.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        let mut seen = Vec::new();
        w.run_until(11.0, |_, ev| seen.push(ev));
        assert_eq!(seen, vec![SimEvent::ChannelClosed { channel: ch, at_ms: 10.0 }]);
        assert_eq!(w.send(ch, "a", vec![1]).unwrap(), SendOutcome::Lost);
        w.run_until(300.0, |_, ev| seen.push(ev));
        assert_eq!(seen[1], SimEvent::ChannelReopened { channel: ch, at_ms: 260.0 });
        assert!(matches!(w.send(ch, "a", vec![1]).unwrap(), SendOutcome::Scheduled { .. }));
    }

    #[test]
    fn closure_drops_in_flight() {
        let mut w = SimWorld::new(1);
        let ch = w.connect("a", "b", LinkConfig::with_delay(20.0)).unwrap();
        w.send(ch, "a", vec![1]).unwrap();
        w.run_until(5.0, |_, _| {});
        w.close_channel(ch).unwrap();
        let got = deliveries(&mut w);
        assert!(got.is_empty());
        let s = w.stats(ch).unwrap();
        assert_eq!((s.lost, s.in_flight), (1, 0));
        assert!(s.is_conserved());
    }

    #[test]
    fn partition_window() {
        let mut w = SimWorld::new(1);
        let cfg = LinkConfig {
            partitions: vec![(10.0, 20.0)],
            ..LinkConfig::with_delay(1.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        w.run_until(10.0, |_, _| {});
        assert_eq!(w.send(ch, "a", vec![1]).unwrap(), SendOutcome::Lost);
        w.run_until(20.0, |_, _| {});
        assert!(matches!(w.send(ch, "a", vec![1]).unwrap(), SendOutcome::Scheduled { .. }));
    }

    #[test]
    fn added_partitions_merge() {
        let mut w = SimWorld::new(1);
        let cfg = LinkConfig {
            partitions: vec![(10.0, 20.0)],
            ..LinkConfig::default()
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        w.add_partition(ch, 15.0, 30.0).unwrap();
        w.add_partition(ch, 40.0, 50.0).unwrap();
        assert_eq!(w.link_config(ch).unwrap().partitions, vec![(10.0, 30.0), (40.0, 50.0)]);
        assert!(w.link_config(ch).unwrap().validate().is_ok());
        assert!(w.add_partition(ch, 5.0, 5.0).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut w = SimWorld::new(1);
        let overlapping = LinkConfig {
            partitions: vec![(0.0, 10.0), (5.0, 12.0)],
            ..LinkConfig::default()
        };
        assert!(w.connect("a", "b", overlapping).is_err());
        let lossy = LinkConfig {
            loss_rate: 1.5,
            ..LinkConfig::default()
        };
        assert!(w.connect("a", "b", lossy).is_err());
        assert_eq!(w.send(ChannelId(3), "a", vec![]), Err(SimError::UnknownChannel(ChannelId(3))));
        let ch = w.connect("a", "b", LinkConfig::default()).unwrap();
        assert!(matches!(w.send(ch, "z", vec![]), Err(SimError::NotAnEndpoint { .. })));
        assert_eq!(SimWorld::new(0).step(), Err(SimError::NothingScheduled));
    }

    #[test]
    fn duplicates_are_counted() {
        let mut w = SimWorld::new(3);
        let cfg = LinkConfig {
            duplicate_rate: 1.0,
            ..LinkConfig::with_delay(1.0)
        };
        let ch = w.connect("a", "b", cfg).unwrap();
        w.send(ch, "a", vec![9]).unwrap();
        assert_eq!(deliveries(&mut w).len(), 2);
        let s = w.stats(ch).unwrap();
        assert_eq!((s.sent, s.delivered, s.duplicated), (2, 2, 1));
        assert!(s.is_conserved());
    }

    #[test]
    fn same_seed_same_trace() {
        fn trace(seed: u64) -> Vec<SimEvent> {
            let mut w = SimWorld::new(seed);
            let cfg = LinkConfig {
                jitter_ms: 3.0,
                loss_rate: 0.2,
                duplicate_rate: 0.1,
                ordered: false,
                closures: vec![40.0],
                ..LinkConfig::with_delay(5.0)
            };
            let ch = w.connect("a", "b", cfg).unwrap();
            let mut out = Vec::new();
            for i in 0..100u8 {
                let _ = w.send(ch, if i % 2 == 0 { "a" } else { "b" }, vec![i]);
                w.run_until(w.now() + 1.0, |_, ev| out.push(ev));
            }
            w.run_until(1000.0, |_, ev| out.push(ev));
            out
        }
        assert_eq!(trace(11), trace(11));
        assert_ne!(trace(11), trace(12));
    }
}
