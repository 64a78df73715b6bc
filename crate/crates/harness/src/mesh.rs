//! In-process signaling for direct topologies.
//!
//! A directory server and one client session per replica exchange messages
//! through loopback queues. Data channels count as usable once both ends
//! have reported `OpenChannel`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::debug;
use xsync_core::ReplicaId;
use xsync_net::signaling::{
    ClientEvent, ClientSession, Handshake, LocalAction, ServerEvent, ServerState, SignalMessage,
};

#[derive(Debug)]
pub struct SignalMesh {
    server: ServerState<usize>,
    sessions: Vec<ClientSession>,
    signal_ids: Vec<Option<ReplicaId>>,
    inbox: VecDeque<(usize, SignalMessage)>,
    outbox: VecDeque<(usize, SignalMessage)>,
    open: BTreeSet<(usize, usize)>,
    opens: u64,
    messages: u64,
}

impl SignalMesh {
    /// Connects `n` clients in index order and runs signaling to quiescence.
    pub fn new(n: usize) -> Self {
        let mut mesh = Self {
            server: ServerState::new(),
            sessions: vec![ClientSession::new(); n],
            signal_ids: vec![None; n],
            inbox: VecDeque::new(),
            outbox: VecDeque::new(),
            open: BTreeSet::new(),
            opens: 0,
            messages: 0,
        };
        for i in 0..n {
            let out = mesh.server.handle(ServerEvent::Connect(i));
            mesh.post(out);
            mesh.quiesce();
        }
        mesh
    }

    fn post(&mut self, out: Vec<(ReplicaId, SignalMessage)>) {
        for (to, msg) in out {
            let Some(&slot) = self.server.connection(&to) else {
                debug!("dropping signal for departed {to}");
                continue;
            };
            if let SignalMessage::Welcome { id, .. } = &msg {
                self.signal_ids[slot] = Some(id.clone());
            }
            self.inbox.push_back((slot, msg));
        }
    }

    fn feed(&mut self, slot: usize, ev: ClientEvent) {
        let out = self.sessions[slot].step(ev);
        for m in out.send {
            self.outbox.push_back((slot, m));
        }
        for a in out.actions {
            match a {
                LocalAction::OpenChannel(p) => {
                    if let Some(j) = self.slot_of(&p) {
                        self.open.insert((slot, j));
                        self.opens += 1;
                    }
                }
                LocalAction::CloseChannel(p) => {
                    if let Some(j) = self.slot_of(&p) {
                        self.open.remove(&(slot, j));
                    }
                }
            }
        }
    }

    fn slot_of(&self, id: &ReplicaId) -> Option<usize> {
        self.signal_ids.iter().position(|s| s.as_ref() == Some(id))
    }

    fn quiesce(&mut self) {
        loop {
            if let Some((slot, msg)) = self.inbox.pop_front() {
                self.messages += 1;
                self.feed(slot, msg.into());
            } else if let Some((slot, msg)) = self.outbox.pop_front() {
                self.messages += 1;
                let sender = self.signal_ids[slot].clone().expect("welcomed before sending");
                let out = self.server.handle(ServerEvent::Inbound(sender, msg));
                self.post(out);
            } else {
                break;
            }
        }
    }

    /// Both ends hold an open channel.
    pub fn is_up(&self, a: usize, b: usize) -> bool {
        self.open.contains(&(a, b)) && self.open.contains(&(b, a))
    }

    pub fn mark_down(&mut self, a: usize, b: usize) {
        self.open.remove(&(a, b));
        self.open.remove(&(b, a));
    }

    /// Reports the lost channel to both ends and reruns the handshake.
    /// Returns whether the pair is connected again.
    pub fn renegotiate(&mut self, a: usize, b: usize) -> bool {
        self.mark_down(a, b);
        for (x, y) in [(a, b), (b, a)] {
            if let Some(peer) = self.signal_ids[y].clone() {
                self.feed(x, ClientEvent::ChannelClosed(peer));
            }
        }
        self.quiesce();
        self.is_up(a, b)
    }

    pub fn state(&self, a: usize, b: usize) -> Option<Handshake> {
        let peer = self.signal_ids[b].as_ref()?;
        self.sessions[a].state(peer)
    }

    pub fn signal_id(&self, slot: usize) -> Option<&ReplicaId> {
        self.signal_ids[slot].as_ref()
    }

    pub fn channel_opens(&self) -> u64 {
        self.opens
    }

    pub fn signal_messages(&self) -> u64 {
        self.messages
    }

    /// Pairs that are not connected on both ends.
    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.sessions.len();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| {
                !(self.is_up(a, b)
                    && self.state(a, b) == Some(Handshake::Connected)
                    && self.state(b, a) == Some(Handshake::Connected))
            })
            .collect()
    }

    pub fn assignments(&self) -> BTreeMap<usize, ReplicaId> {
        self.signal_ids
            .iter()
            .enumerate()
            .filter_map(|(i, s)| Some((i, s.clone()?)))
            .collect()
    }
}
