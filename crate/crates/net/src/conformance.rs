//! Drives the signaling server and client sessions through join/leave
//! orderings and checks that every live pair ends up connected once.

use std::collections::{BTreeMap, VecDeque};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsync_core::ReplicaId;

use crate::signaling::{ClientEvent, ClientSession, Handshake, LocalAction, ServerEvent, ServerState, SignalMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Join(usize),
    Leave(usize),
}

/// When queued signaling messages move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    AfterEachStep,
    AtEnd,
    /// A random number of random single deliveries after each step.
    Random(u64),
}

pub struct Client {
    pub id: Option<ReplicaId>,
    pub session: ClientSession,
    inbox: VecDeque<SignalMessage>,
    outbox: VecDeque<SignalMessage>,
    pub opens: BTreeMap<ReplicaId, u32>,
    pub closes: BTreeMap<ReplicaId, u32>,
}

impl Client {
    fn new() -> Self {
        Self {
            id: None,
            session: ClientSession::new(),
            inbox: VecDeque::new(),
            outbox: VecDeque::new(),
            opens: BTreeMap::new(),
            closes: BTreeMap::new(),
        }
    }

    pub fn feed(&mut self, ev: ClientEvent) {
        let out = self.session.step(ev);
        self.outbox.extend(out.send);
        for a in out.actions {
            match a {
                LocalAction::OpenChannel(p) => *self.opens.entry(p).or_default() += 1,
                LocalAction::CloseChannel(p) => *self.closes.entry(p).or_default() += 1,
            }
        }
    }
}

/// One server and the clients of the currently joined slots.
pub struct Net {
    server: ServerState<usize>,
    pub clients: BTreeMap<usize, Client>,
    rng: Option<ChaCha8Rng>,
}

impl Net {
    pub fn new(rng: Option<ChaCha8Rng>) -> Self {
        Self {
            server: ServerState::new(),
            clients: BTreeMap::new(),
            rng,
        }
    }

    fn post(&mut self, out: Vec<(ReplicaId, SignalMessage)>) {
        for (to, msg) in out {
            let slot = *self.server.connection(&to).expect("server addresses live peers");
            let c = self.clients.get_mut(&slot).expect("live slot");
            if let SignalMessage::Welcome { id, .. } = &msg {
                c.id = Some(id.clone());
            }
            c.inbox.push_back(msg);
        }
    }

    pub fn apply(&mut self, step: Step) {
        match step {
            Step::Join(slot) => {
                self.clients.insert(slot, Client::new());
                let out = self.server.handle(ServerEvent::Connect(slot));
                self.post(out);
            }
            Step::Leave(slot) => {
                let c = self.clients.remove(&slot).expect("leaving slot joined");
                let out = self.server.handle(ServerEvent::Disconnect(c.id.expect("welcomed on connect")));
                self.post(out);
            }
        }
    }

    /// Moves one queued message. Returns false when every queue is empty.
    pub fn pump_one(&mut self) -> bool {
        let mut ready: Vec<(usize, bool)> = Vec::new();
        for (slot, c) in &self.clients {
            if !c.inbox.is_empty() {
                ready.push((*slot, true));
            }
            if !c.outbox.is_empty() {
                ready.push((*slot, false));
            }
        }
        if ready.is_empty() {
            return false;
        }
        let pick = match &mut self.rng {
            Some(rng) => ready[rng.gen_range(0..ready.len())],
            None => ready[0],
        };
        let c = self.clients.get_mut(&pick.0).expect("ready slot");
        if pick.1 {
            let msg = c.inbox.pop_front().expect("nonempty");
            c.feed(msg.into());
        } else {
            let msg = c.outbox.pop_front().expect("nonempty");
            let sender = c.id.clone().expect("welcomed before sending");
            let out = self.server.handle(ServerEvent::Inbound(sender, msg));
            self.post(out);
        }
        true
    }

    pub fn quiesce(&mut self) -> Result<(), String> {
        for _ in 0..100_000 {
            if !self.pump_one() {
                return Ok(());
            }
        }
        Err("signaling did not quiesce".into())
    }

    /// Every live pair is connected both ways, opened once and never closed.
    pub fn check_mesh(&self) -> Result<(), String> {
        for (a, b) in self.clients.values().tuple_combinations() {
            for (x, y) in [(a, b), (b, a)] {
                let yid = y.id.as_ref().ok_or("client without id")?;
                let xid = x.id.as_ref().ok_or("client without id")?;
                if x.session.state(yid) != Some(Handshake::Connected) {
                    return Err(format!("{xid} -> {yid}: {:?}", x.session.state(yid)));
                }
                if x.opens.get(yid) != Some(&1) {
                    return Err(format!("{xid} -> {yid}: opened {:?} times", x.opens.get(yid)));
                }
                if x.closes.contains_key(yid) {
                    return Err(format!("{xid} -> {yid}: closed"));
                }
            }
        }
        for c in self.clients.values() {
            if c.session.known_peers().len() + 1 != self.clients.len() {
                return Err(format!("{:?} knows {} peers", c.id, c.session.known_peers().len()));
            }
        }
        Ok(())
    }

    pub fn id(&self, slot: usize) -> ReplicaId {
        self.clients[&slot].id.clone().expect("welcomed")
    }
}

pub fn run(steps: &[Step], delivery: Delivery) -> Result<Net, String> {
    let rng = match delivery {
        Delivery::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut net = Net::new(rng);
    for &s in steps {
        net.apply(s);
        match delivery {
            Delivery::AfterEachStep => net.quiesce()?,
            Delivery::AtEnd => {}
            Delivery::Random(_) => {
                let n = net.rng.as_mut().expect("seeded").gen_range(0..6);
                for _ in 0..n {
                    net.pump_one();
                }
            }
        }
    }
    net.quiesce()?;
    Ok(net)
}

/// Join orders for `n` clients, each optionally interrupted by one client
/// leaving and, optionally, a fresh client taking its place.
pub fn scenarios(n: usize) -> Vec<Vec<Step>> {
    let mut out = Vec::new();
    for order in (0..n).permutations(n) {
        let joins: Vec<Step> = order.iter().map(|&i| Step::Join(i)).collect();
        out.push(joins.clone());
        for leaver in 0..n {
            let at = order.iter().position(|&i| i == leaver).expect("in order");
            for pos in at + 1..=n {
                let mut s = joins[..pos].to_vec();
                s.push(Step::Leave(leaver));
                s.extend_from_slice(&joins[pos..]);
                out.push(s.clone());
                s.push(Step::Join(leaver));
                out.push(s);
            }
        }
    }
    out
}

/// Runs every scenario for up to `max_n` clients under in-step and
/// deferred delivery. Returns the number of runs checked.
pub fn check_exhaustive(max_n: usize) -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=max_n {
        for steps in scenarios(n) {
            for delivery in [Delivery::AfterEachStep, Delivery::AtEnd] {
                run(&steps, delivery)
                    .and_then(|net| net.check_mesh())
                    .map_err(|e| format!("{steps:?} {delivery:?}: {e}"))?;
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Every scenario for up to `max_n` clients under `seeds` random delivery
/// schedules each.
pub fn check_random(max_n: usize, seeds: u64) -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=max_n {
        for (k, steps) in scenarios(n).into_iter().enumerate() {
            for seed in 0..seeds {
                let d = Delivery::Random(seed * 1000 + k as u64);
                run(&steps, d)
                    .and_then(|net| net.check_mesh())
                    .map_err(|e| format!("{steps:?} {d:?}: {e}"))?;
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Closes one channel of a three-client mesh, from both ends when `both`
/// and from the initiator only otherwise, and checks that the pair is
/// connected again with exactly one reopen while other pairs are untouched.
pub fn check_renegotiation(both: bool) -> Result<(), String> {
    let steps: Vec<Step> = (0..3).map(Step::Join).collect();
    let mut net = run(&steps, Delivery::AfterEachStep)?;
    net.check_mesh()?;
    let (a, b) = (net.id(0), net.id(1));
    net.clients.get_mut(&0).expect("joined").feed(ClientEvent::ChannelClosed(b.clone()));
    if both {
        net.clients.get_mut(&1).expect("joined").feed(ClientEvent::ChannelClosed(a.clone()));
    }
    net.quiesce()?;
    for (slot, peer) in [(0, &b), (1, &a)] {
        let c = &net.clients[&slot];
        if c.session.state(peer) != Some(Handshake::Connected) {
            return Err(format!("slot {slot} -> {peer}: {:?} after closure", c.session.state(peer)));
        }
        if c.opens.get(peer) != Some(&2) {
            return Err(format!("slot {slot} -> {peer}: opened {:?} times", c.opens.get(peer)));
        }
    }
    if !net.clients[&2].opens.values().all(|&n| n == 1) {
        return Err("bystander reopened a channel".into());
    }
    Ok(())
}
