//! Peer discovery: a directory server that routes handshake messages, and
//! the client-side handshake driver.
//!
//! Both sides are pure state machines. Transports feed events in and carry
//! the returned messages out; nothing here performs I/O. SDP and ICE payloads
//! are opaque strings that the server never inspects.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use serde::{Deserialize, Serialize};
use xsync_core::ReplicaId;

pub const UNKNOWN_PEER: &str = "unknown-peer";
pub const UNKNOWN_SENDER: &str = "unknown-sender";
pub const SENDER_MISMATCH: &str = "sender-mismatch";
pub const UNEXPECTED_MESSAGE: &str = "unexpected-message";

/// One signaling message; newline-delimited JSON on stream transports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "kebab-case")]
pub enum SignalMessage {
    Welcome { id: ReplicaId, peers: Vec<ReplicaId> },
    Joined { id: ReplicaId },
    Left { id: ReplicaId },
    Offer { from: ReplicaId, to: ReplicaId, sdp: String },
    Answer { from: ReplicaId, to: ReplicaId, sdp: String },
    Ice { from: ReplicaId, to: ReplicaId, candidate: String },
    RouteError { to: ReplicaId, reason: String },
}

impl SignalMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("signal messages always serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Sender and recipient of a peer-to-peer message.
    pub fn route(&self) -> Option<(&ReplicaId, &ReplicaId)> {
        match self {
            SignalMessage::Offer { from, to, .. }
            | SignalMessage::Answer { from, to, .. }
            | SignalMessage::Ice { from, to, .. } => Some((from, to)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ServerEvent<H> {
    Connect(H),
    Disconnect(ReplicaId),
    Inbound(ReplicaId, SignalMessage),
}

/// Messages produced by the server, each addressed to a peer id.
pub type Outbox = Vec<(ReplicaId, SignalMessage)>;

/// Directory of live connections keyed by server-assigned ids `p1, p2, ...`.
#[derive(Clone, Debug)]
pub struct ServerState<H> {
    directory: BTreeMap<ReplicaId, H>,
    id_counter: u64,
}

impl<H> Default for ServerState<H> {
    fn default() -> Self {
        Self {
            directory: BTreeMap::new(),
            id_counter: 0,
        }
    }
}

impl<H> ServerState<H> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn connection(&self, id: &ReplicaId) -> Option<&H> {
        self.directory.get(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &ReplicaId> {
        self.directory.keys()
    }

    pub fn handle(&mut self, event: ServerEvent<H>) -> Outbox {
        match event {
            ServerEvent::Connect(handle) => {
                self.id_counter += 1;
                let id = ReplicaId::new(format!("p{}", self.id_counter))
                    .expect("generated ids are valid");
                let peers: Vec<_> = self.directory.keys().cloned().collect();
                let mut out = vec![(
                    id.clone(),
                    SignalMessage::Welcome {
                        id: id.clone(),
                        peers: peers.clone(),
                    },
                )];
                out.extend(
                    peers
                        .into_iter()
                        .map(|p| (p, SignalMessage::Joined { id: id.clone() })),
                );
                self.directory.insert(id, handle);
                out
            }
            ServerEvent::Disconnect(id) => {
                if self.directory.remove(&id).is_none() {
                    return Vec::new();
                }
                self.directory
                    .keys()
                    .map(|p| (p.clone(), SignalMessage::Left { id: id.clone() }))
                    .collect()
            }
            ServerEvent::Inbound(sender, msg) => self.route(sender, msg),
        }
    }

    fn route(&self, sender: ReplicaId, msg: SignalMessage) -> Outbox {
        let error = |to: ReplicaId, reason: &str| SignalMessage::RouteError {
            to,
            reason: reason.to_string(),
        };
        if !self.directory.contains_key(&sender) {
            // The sender has no live connection, so the transport drops this.
            return vec![(sender.clone(), error(sender, UNKNOWN_SENDER))];
        }
        let Some((from, to)) = msg.route() else {
            return vec![(sender.clone(), error(sender, UNEXPECTED_MESSAGE))];
        };
        if *from != sender {
            let to = to.clone();
            return vec![(sender, error(to, SENDER_MISMATCH))];
        }
        if self.directory.contains_key(to) {
            let to = to.clone();
            vec![(to, msg)]
        } else {
            let to = to.clone();
            vec![(sender, error(to, UNKNOWN_PEER))]
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Handshake {
    Idle,
    OfferSent,
    AnswerSent,
    Connected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientEvent {
    Welcomed { id: ReplicaId, peers: Vec<ReplicaId> },
    PeerJoined(ReplicaId),
    PeerLeft(ReplicaId),
    SignalIn(SignalMessage),
    ChannelClosed(ReplicaId),
}

impl From<SignalMessage> for ClientEvent {
    fn from(msg: SignalMessage) -> Self {
        match msg {
            SignalMessage::Welcome { id, peers } => ClientEvent::Welcomed { id, peers },
            SignalMessage::Joined { id } => ClientEvent::PeerJoined(id),
            SignalMessage::Left { id } => ClientEvent::PeerLeft(id),
            other => ClientEvent::SignalIn(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LocalAction {
    /// The data channel to this peer is usable.
    OpenChannel(ReplicaId),
    /// Tear down whatever is left of the channel to this peer.
    CloseChannel(ReplicaId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientOutput {
    pub send: Vec<SignalMessage>,
    pub actions: Vec<LocalAction>,
}

/// Client handshake driver. The lexicographically smaller id of each pair
/// sends the offer, so two peers never offer to each other at once.
///
/// Flow for `A < B`: A sends `Offer`, B replies `Answer`, A becomes
/// connected and sends its `Ice` candidate, B becomes connected on receipt.
#[derive(Clone, Debug, Default)]
pub struct ClientSession {
    self_id: Option<ReplicaId>,
    known_peers: BTreeSet<ReplicaId>,
    handshakes: BTreeMap<ReplicaId, Handshake>,
    generation: u64,
}

impl ClientSession {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn self_id(&self) -> Option<&ReplicaId> {
        self.self_id.as_ref()
    }

    pub fn known_peers(&self) -> &BTreeSet<ReplicaId> {
        &self.known_peers
    }

    pub fn state(&self, peer: &ReplicaId) -> Option<Handshake> {
        self.handshakes.get(peer).copied()
    }

    pub fn connected(&self) -> impl Iterator<Item = &ReplicaId> {
        self.handshakes
            .iter()
            .filter(|(_, h)| **h == Handshake::Connected)
            .map(|(p, _)| p)
    }

    fn initiates(&self, peer: &ReplicaId) -> bool {
        self.self_id.as_ref().is_some_and(|me| me < peer)
    }

    fn offer(&mut self, peer: &ReplicaId, out: &mut ClientOutput) {
        let me = self.self_id.clone().expect("offers are sent after welcome");
        self.generation += 1;
        out.send.push(SignalMessage::Offer {
            sdp: format!("offer {me}->{peer} #{}", self.generation),
            from: me,
            to: peer.clone(),
        });
        self.handshakes.insert(peer.clone(), Handshake::OfferSent);
    }

    fn learn(&mut self, peer: ReplicaId, out: &mut ClientOutput) {
        if Some(&peer) == self.self_id.as_ref() || !self.known_peers.insert(peer.clone()) {
            return;
        }
        if self.initiates(&peer) {
            self.offer(&peer, out);
        } else {
            self.handshakes.insert(peer, Handshake::Idle);
        }
    }

    pub fn step(&mut self, event: ClientEvent) -> ClientOutput {
        let mut out = ClientOutput::default();
        match event {
            ClientEvent::Welcomed { id, peers } => {
                if self.self_id.is_some() {
                    debug!("duplicate welcome for {id} ignored");
                    return out;
                }
                self.self_id = Some(id);
                for p in peers {
                    self.learn(p, &mut out);
                }
            }
            ClientEvent::PeerJoined(id) => self.learn(id, &mut out),
            ClientEvent::PeerLeft(id) => {
                self.known_peers.remove(&id);
                if self.handshakes.remove(&id) == Some(Handshake::Connected) {
                    out.actions.push(LocalAction::CloseChannel(id));
                }
            }
            ClientEvent::ChannelClosed(peer) => {
                if !self.known_peers.contains(&peer) {
                    return out;
                }
                if self.initiates(&peer) {
                    self.offer(&peer, &mut out);
                } else {
                    self.handshakes.insert(peer, Handshake::Idle);
                }
            }
            ClientEvent::SignalIn(msg) => self.on_signal(msg, &mut out),
        }
        out
    }

    fn on_signal(&mut self, msg: SignalMessage, out: &mut ClientOutput) {
        let Some(me) = self.self_id.clone() else {
            debug!("signal before welcome ignored: {msg:?}");
            return;
        };
        if let Some((_, to)) = msg.route() {
            if *to != me {
                debug!("misaddressed signal ignored: {msg:?}");
                return;
            }
        }
        match msg {
            SignalMessage::Offer { from, .. } => {
                if self.initiates(&from) {
                    debug!("offer from {from}, which should answer instead; ignored");
                    return;
                }
                self.learn(from.clone(), out);
                if self.handshakes.get(&from) == Some(&Handshake::Connected) {
                    // Peer is renegotiating a channel we still consider open.
                    out.actions.push(LocalAction::CloseChannel(from.clone()));
                }
                out.send.push(SignalMessage::Answer {
                    sdp: format!("answer {me}->{from}"),
                    from: me,
                    to: from.clone(),
                });
                self.handshakes.insert(from, Handshake::AnswerSent);
            }
            SignalMessage::Answer { from, .. } => {
                if self.handshakes.get(&from) != Some(&Handshake::OfferSent) {
                    debug!("answer from {from} without a pending offer ignored");
                    return;
                }
                self.handshakes.insert(from.clone(), Handshake::Connected);
                out.send.push(SignalMessage::Ice {
                    candidate: format!("candidate {me}"),
                    from: me,
                    to: from.clone(),
                });
                out.actions.push(LocalAction::OpenChannel(from));
            }
            SignalMessage::Ice { from, .. } => {
                if self.handshakes.get(&from) != Some(&Handshake::AnswerSent) {
                    debug!("ice from {from} outside an answered handshake ignored");
                    return;
                }
                self.handshakes.insert(from.clone(), Handshake::Connected);
                out.actions.push(LocalAction::OpenChannel(from));
            }
            SignalMessage::RouteError { to, reason } => {
                debug!("route error toward {to}: {reason}");
            }
            other => {
                let ev = ClientEvent::from(other);
                let more = self.step(ev);
                out.send.extend(more.send);
                out.actions.extend(more.actions);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> ReplicaId {
        ReplicaId::new(s).unwrap()
    }

    #[test]
    fn connect_emits_welcome_and_joined() {
        let mut s = ServerState::new();
        let out = s.handle(ServerEvent::Connect(0u32));
        assert_eq!(out, vec![(r("p1"), SignalMessage::Welcome { id: r("p1"), peers: vec![] })]);
        let out = s.handle(ServerEvent::Connect(1u32));
        assert_eq!(
            out,
            vec![
                (r("p2"), SignalMessage::Welcome { id: r("p2"), peers: vec![r("p1")] }),
                (r("p1"), SignalMessage::Joined { id: r("p2") }),
            ]
        );
        assert_eq!(s.connection(&r("p2")), Some(&1));
    }

    #[test]
    fn forwards_and_reports_unknown_peers() {
        let mut s = ServerState::new();
        s.handle(ServerEvent::Connect(()));
        s.handle(ServerEvent::Connect(()));
        let offer = SignalMessage::Offer { from: r("p1"), to: r("p2"), sdp: "x".into() };
        assert_eq!(
            s.handle(ServerEvent::Inbound(r("p1"), offer.clone())),
            vec![(r("p2"), offer)]
        );
        let stray = SignalMessage::Offer { from: r("p1"), to: r("p9"), sdp: "x".into() };
        assert_eq!(
            s.handle(ServerEvent::Inbound(r("p1"), stray)),
            vec![(r("p1"), SignalMessage::RouteError { to: r("p9"), reason: UNKNOWN_PEER.into() })]
        );
        let spoof = SignalMessage::Ice { from: r("p2"), to: r("p1"), candidate: "c".into() };
        let out = s.handle(ServerEvent::Inbound(r("p1"), spoof));
        assert!(matches!(&out[0].1, SignalMessage::RouteError { reason, .. } if reason == SENDER_MISMATCH));
        let ghost = SignalMessage::Ice { from: r("p7"), to: r("p1"), candidate: "c".into() };
        let out = s.handle(ServerEvent::Inbound(r("p7"), ghost));
        assert!(matches!(&out[0].1, SignalMessage::RouteError { reason, .. } if reason == UNKNOWN_SENDER));
    }

    #[test]
    fn disconnect_stops_routing() {
        let mut s = ServerState::new();
        s.handle(ServerEvent::Connect(()));
        s.handle(ServerEvent::Connect(()));
        assert_eq!(
            s.handle(ServerEvent::Disconnect(r("p2"))),
            vec![(r("p1"), SignalMessage::Left { id: r("p2") })]
        );
        assert!(s.handle(ServerEvent::Disconnect(r("p2"))).is_empty());
        let offer = SignalMessage::Offer { from: r("p1"), to: r("p2"), sdp: "x".into() };
        let out = s.handle(ServerEvent::Inbound(r("p1"), offer));
        assert_eq!(out[0].0, r("p1"));
    }

    #[test]
    fn wire_tags_and_fields() {
        let m = SignalMessage::RouteError { to: r("p3"), reason: UNKNOWN_PEER.into() };
        assert_eq!(m.to_json(), r#"{"t":"route-error","to":"p3","reason":"unknown-peer"}"#);
        let w = SignalMessage::Welcome { id: r("p2"), peers: vec![r("p1")] };
        assert_eq!(w.to_json(), r#"{"t":"welcome","id":"p2","peers":["p1"]}"#);
        let j = SignalMessage::Joined { id: r("p2") };
        assert_eq!(j.to_json(), r#"{"t":"joined","id":"p2"}"#);
        let o = SignalMessage::Offer { from: r("p1"), to: r("p2"), sdp: "v=0".into() };
        assert_eq!(o.to_json(), r#"{"t":"offer","from":"p1","to":"p2","sdp":"v=0"}"#);
        let i = SignalMessage::Ice { from: r("p1"), to: r("p2"), candidate: "c".into() };
        assert_eq!(i.to_json(), r#"{"t":"ice","from":"p1","to":"p2","candidate":"c"}"#);
        assert_eq!(SignalMessage::from_json(&i.to_json()).unwrap(), i);
    }

    #[test]
    fn smaller_id_initiates() {
        let mut a = ClientSession::new();
        a.step(ClientEvent::Welcomed { id: r("A"), peers: vec![] });
        let out = a.step(ClientEvent::PeerJoined(r("B")));
        assert!(matches!(&out.send[..], [SignalMessage::Offer { from, to, .. }] if *from == r("A") && *to == r("B")));
        assert_eq!(a.state(&r("B")), Some(Handshake::OfferSent));

        let mut b = ClientSession::new();
        let out = b.step(ClientEvent::Welcomed { id: r("B"), peers: vec![r("A")] });
        assert!(out.send.is_empty());
        assert_eq!(b.state(&r("A")), Some(Handshake::Idle));
    }

    fn handshake(a: &mut ClientSession, b: &mut ClientSession) {
        let mut to_b: Vec<SignalMessage> = Vec::new();
        let mut to_a: Vec<SignalMessage> = Vec::new();
        let out = a.step(ClientEvent::PeerJoined(r("B")));
        to_b.extend(out.send);
        while !to_a.is_empty() || !to_b.is_empty() {
            for m in std::mem::take(&mut to_b) {
                to_a.extend(b.step(ClientEvent::SignalIn(m)).send);
            }
            for m in std::mem::take(&mut to_a) {
                to_b.extend(a.step(ClientEvent::SignalIn(m)).send);
            }
        }
    }

    #[test]
    fn offer_answer_ice_connects_both() {
        let mut a = ClientSession::new();
        let mut b = ClientSession::new();
        a.step(ClientEvent::Welcomed { id: r("A"), peers: vec![] });
        b.step(ClientEvent::Welcomed { id: r("B"), peers: vec![r("A")] });
        handshake(&mut a, &mut b);
        assert_eq!(a.state(&r("B")), Some(Handshake::Connected));
        assert_eq!(b.state(&r("A")), Some(Handshake::Connected));
    }

    #[test]
    fn closure_restarts_handshake() {
        let mut a = ClientSession::new();
        a.step(ClientEvent::Welcomed { id: r("A"), peers: vec![] });
        let offer = a.step(ClientEvent::PeerJoined(r("B"))).send.remove(0);
        let answer = SignalMessage::Answer { from: r("B"), to: r("A"), sdp: "s".into() };
        let out = a.step(ClientEvent::SignalIn(answer));
        assert_eq!(out.actions, vec![LocalAction::OpenChannel(r("B"))]);
        let out = a.step(ClientEvent::ChannelClosed(r("B")));
        assert_eq!(a.state(&r("B")), Some(Handshake::OfferSent));
        match (&offer, &out.send[..]) {
            (SignalMessage::Offer { sdp: first, .. }, [SignalMessage::Offer { sdp: second, .. }]) => {
                assert_ne!(first, second)
            }
            other => panic!("expected a fresh offer, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_signals_are_ignored() {
        let mut b = ClientSession::new();
        b.step(ClientEvent::Welcomed { id: r("B"), peers: vec![r("A")] });
        let answer = SignalMessage::Answer { from: r("A"), to: r("B"), sdp: "s".into() };
        assert_eq!(b.step(ClientEvent::SignalIn(answer)), ClientOutput::default());
        let ice = SignalMessage::Ice { from: r("A"), to: r("B"), candidate: "c".into() };
        assert_eq!(b.step(ClientEvent::SignalIn(ice)), ClientOutput::default());
        assert_eq!(b.state(&r("A")), Some(Handshake::Idle));
        // An offer from the peer that ought to answer is ignored too.
        let mut a = ClientSession::new();
        a.step(ClientEvent::Welcomed { id: r("A"), peers: vec![] });
        let glare = SignalMessage::Offer { from: r("B"), to: r("A"), sdp: "s".into() };
        assert!(a.step(ClientEvent::SignalIn(glare)).send.is_empty());
    }

    #[test]
    fn leaving_peer_closes_channel() {
        let mut a = ClientSession::new();
        let mut b = ClientSession::new();
        a.step(ClientEvent::Welcomed { id: r("A"), peers: vec![] });
        b.step(ClientEvent::Welcomed { id: r("B"), peers: vec![r("A")] });
        handshake(&mut a, &mut b);
        let out = a.step(ClientEvent::PeerLeft(r("B")));
        assert_eq!(out.actions, vec![LocalAction::CloseChannel(r("B"))]);
        assert_eq!(a.state(&r("B")), None);
        assert!(a.step(ClientEvent::ChannelClosed(r("B"))).send.is_empty());
    }
}
