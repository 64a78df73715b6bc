//! Round-trip probes over a path of simulated channels.
//!
//! A probe sends a ping from the first hop's source along every hop to the
//! far end, which answers with a pong along the reversed path. Intermediate
//! nodes act as relays and forward after an optional processing delay.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::simnet::{ChannelId, NodeId, SimError, SimEvent, SimResult, SimWorld, TimerToken};

const MAGIC: &[u8; 4] = b"RTT1";
const HEADER_LEN: usize = 4 + 4 + 8 + 1 + 1;

/// Trailing window for the running mean.
pub const DEFAULT_WINDOW_MS: f64 = 60_000.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hop {
    pub channel: ChannelId,
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RttSample {
    pub at_ms: f64,
    pub rtt_ms: f64,
}

#[derive(Clone, Debug)]
pub struct ProbeConfig {
    pub period_ms: f64,
    pub window_ms: f64,
    /// Total bytes per ping and pong, header included.
    pub payload_bytes: usize,
    pub relay_delay_ms: f64,
    pub max_pings: Option<u64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            period_ms: 1000.0,
            window_ms: DEFAULT_WINDOW_MS,
            payload_bytes: HEADER_LEN,
            relay_delay_ms: 0.0,
            max_pings: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Leg {
    Ping,
    Pong,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Header {
    probe: u32,
    seq: u64,
    leg: Leg,
    hop: u8,
}

impl Header {
    fn encode(&self, total: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(total.max(HEADER_LEN));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.probe.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.push(match self.leg {
            Leg::Ping => 0,
            Leg::Pong => 1,
        });
        out.push(self.hop);
        out.resize(total.max(HEADER_LEN), 0);
        out
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return None;
        }
        let probe = u32::from_be_bytes(bytes[4..8].try_into().ok()?);
        let seq = u64::from_be_bytes(bytes[8..16].try_into().ok()?);
        let leg = match bytes[16] {
            0 => Leg::Ping,
            1 => Leg::Pong,
            _ => return None,
        };
        Some(Self {
            probe,
            seq,
            leg,
            hop: bytes[17],
        })
    }
}

/// Timer owners at or above this value belong to probes.
pub const PROBE_TIMER_BASE: u32 = 0x5254_0000;

#[derive(Clone, Debug)]
pub struct RttProbe {
    id: u32,
    hops: Vec<Hop>,
    config: ProbeConfig,
    sent_at: BTreeMap<u64, f64>,
    next_seq: u64,
    samples: Vec<RttSample>,
    pending_forwards: BTreeMap<u64, Header>,
    next_forward: u64,
    rejected: u64,
}

impl RttProbe {
    pub fn new(id: u32, hops: Vec<Hop>, config: ProbeConfig) -> SimResult<Self> {
        if hops.is_empty() || hops.len() > u8::MAX as usize {
            return Err(SimError::InvalidConfig("probe path needs 1..=255 hops".into()));
        }
        if hops.windows(2).any(|w| w[0].to != w[1].from) {
            return Err(SimError::InvalidConfig("probe hops must form a path".into()));
        }
        if !(config.period_ms > 0.0) {
            return Err(SimError::InvalidConfig("probe period must be positive".into()));
        }
        Ok(Self {
            id,
            hops,
            config,
            sent_at: BTreeMap::new(),
            next_seq: 0,
            samples: Vec::new(),
            pending_forwards: BTreeMap::new(),
            next_forward: 0,
            rejected: 0,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn origin(&self) -> &NodeId {
        &self.hops[0].from
    }

    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.hops.iter().map(|h| h.channel)
    }

    fn ping_token(&self) -> TimerToken {
        TimerToken {
            owner: PROBE_TIMER_BASE + self.id * 2,
            value: 0,
        }
    }

    fn forward_owner(&self) -> u32 {
        PROBE_TIMER_BASE + self.id * 2 + 1
    }

    /// Schedules the first ping at `at_ms`.
    pub fn start(&self, world: &mut SimWorld, at_ms: f64) {
        let origin = self.origin().clone();
        world.schedule_timer(at_ms, &origin, self.ping_token());
    }

    fn transmit(&mut self, world: &mut SimWorld, header: Header) {
        let hop = &self.hops[header.hop as usize];
        let (ch, from) = match header.leg {
            Leg::Ping => (hop.channel, hop.from.clone()),
            Leg::Pong => (hop.channel, hop.to.clone()),
        };
        match world.send(ch, &from, header.encode(self.config.payload_bytes)) {
            Ok(_) => {}
            Err(SimError::PayloadTooLarge { .. }) => self.rejected += 1,
            Err(e) => log::warn!("probe {} send failed: {e}", self.id),
        }
    }

    /// Reacts to an event if it belongs to this probe. Returns whether it did.
    pub fn handle(&mut self, world: &mut SimWorld, ev: &SimEvent) -> bool {
        match ev {
            SimEvent::Timer { token, at_ms, .. } if *token == self.ping_token() => {
                let seq = self.next_seq;
                self.next_seq += 1;
                self.sent_at.insert(seq, *at_ms);
                self.transmit(
                    world,
                    Header {
                        probe: self.id,
                        seq,
                        leg: Leg::Ping,
                        hop: 0,
                    },
                );
                if self.config.max_pings.is_none_or(|m| self.next_seq < m) {
                    let origin = self.origin().clone();
                    world.schedule_timer(at_ms + self.config.period_ms, &origin, self.ping_token());
                }
                true
            }
            SimEvent::Timer { token, .. } if token.owner == self.forward_owner() => {
                if let Some(header) = self.pending_forwards.remove(&token.value) {
                    self.transmit(world, header);
                }
                true
            }
            SimEvent::Delivery {
                channel,
                payload,
                at_ms,
                ..
            } => {
                let Some(h) = Header::decode(payload) else {
                    return false;
                };
                if h.probe != self.id || self.hops.get(h.hop as usize).map(|x| x.channel) != Some(*channel) {
                    return false;
                }
                let last = self.hops.len() as u8 - 1;
                let next = match h.leg {
                    Leg::Ping if h.hop < last => Some(Header { hop: h.hop + 1, ..h }),
                    Leg::Ping => Some(Header { leg: Leg::Pong, ..h }),
                    Leg::Pong if h.hop > 0 => Some(Header { hop: h.hop - 1, ..h }),
                    Leg::Pong => None,
                };
                match next {
                    None => {
                        if let Some(sent) = self.sent_at.remove(&h.seq) {
                            self.samples.push(RttSample {
                                at_ms: *at_ms,
                                rtt_ms: at_ms - sent,
                            });
                        }
                    }
                    // Only relays add processing delay, not the far endpoint.
                    Some(n) if n.leg == h.leg && self.config.relay_delay_ms > 0.0 => {
                        let key = self.next_forward;
                        self.next_forward += 1;
                        self.pending_forwards.insert(key, n);
                        let relay = match h.leg {
                            Leg::Ping => self.hops[h.hop as usize].to.clone(),
                            Leg::Pong => self.hops[h.hop as usize].from.clone(),
                        };
                        world.schedule_timer(
                            at_ms + self.config.relay_delay_ms,
                            &relay,
                            TimerToken {
                                owner: self.forward_owner(),
                                value: key,
                            },
                        );
                    }
                    Some(n) => self.transmit(world, n),
                }
                true
            }
            _ => false,
        }
    }

    pub fn samples(&self) -> &[RttSample] {
        &self.samples
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn instantaneous(&self) -> Option<f64> {
        self.samples.last().map(|s| s.rtt_ms)
    }

    /// Mean RTT of samples completed within the trailing window ending at `now_ms`.
    pub fn window_mean(&self, now_ms: f64) -> Option<f64> {
        let start = now_ms - self.config.window_ms;
        mean(self.samples.iter().filter(|s| s.at_ms > start).map(|s| s.rtt_ms))
    }

    pub fn mean(&self) -> Option<f64> {
        mean(self.samples.iter().map(|s| s.rtt_ms))
    }

    /// Nearest-rank 95th percentile.
    pub fn p95(&self) -> Option<f64> {
        percentile(self.samples.iter().map(|s| s.rtt_ms).collect(), 0.95)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn percentile(mut values: Vec<f64>, q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    Some(values[rank - 1])
}
