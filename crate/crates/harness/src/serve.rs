//! Live serve mode: a signaling directory plus one hosted replica per
//! connected client, synchronized over simulated links in wall-clock time.
//!
//! Each TCP client gets a reader and a writer thread. A single simulation
//! actor owns all replicas, the signaling server and the network, and talks
//! to the client threads only through channels. Messages are newline
//! delimited JSON: signaling messages, client commands
//! `{"t":"cmd","kind":...}` and server pushes `snapshot`, `spawned`, `rtt`
//! and `error`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde_json::{json, Value};
use xsync_core::{ReplicaId, SyncMessage};
use xsync_net::rtt::{Hop, ProbeConfig, RttProbe};
use xsync_net::signaling::{ServerEvent, ServerState, SignalMessage};
use xsync_net::simnet::{ChannelId, LinkConfig, SimEvent, SimWorld};

use crate::error::{HarnessError, Result};
use crate::replica::{Applied, StateReplica, StrategyState, SyncReplica};
use crate::scenario::{ActionKind, Scenario, StrategySpec};

pub const DEFAULT_PORT: u16 = 9000;
pub const DEFAULT_TICK_MS: u64 = 50;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub port: u16,
    pub tick_ms: u64,
    /// Template for every link between hosted replicas.
    pub link: LinkConfig,
    pub strategy: StrategySpec,
    /// Every n-th exchange round sends full state instead of changes only.
    pub full_every: u64,
    pub rtt_every_ticks: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            tick_ms: DEFAULT_TICK_MS,
            link: LinkConfig::with_delay(10.0),
            strategy: StrategySpec::Fixed(xsync_core::Strategy::Lww),
            full_every: 5,
            rtt_every_ticks: 20,
        }
    }
}

impl ServeConfig {
    /// Takes the default link and strategy from a scenario.
    pub fn from_scenario(port: u16, s: &Scenario) -> Self {
        Self {
            port,
            link: s.links.get("default").cloned().unwrap_or_default(),
            strategy: s.strategy,
            full_every: s.exchange.full_every.max(1),
            ..Self::default()
        }
    }
}

type ConnId = u64;

enum Msg {
    Connect(ConnId, Sender<String>),
    Line(ConnId, String),
    Gone(ConnId),
    Shutdown,
}

struct Client {
    id: ReplicaId,
    tx: Sender<String>,
    replica: StateReplica,
}

struct Sim {
    cfg: ServeConfig,
    started: Instant,
    world: SimWorld,
    server: ServerState<ConnId>,
    clients: BTreeMap<ConnId, Client>,
    channels: BTreeMap<(ConnId, ConnId), ChannelId>,
    probes: Vec<((ConnId, ConnId), RttProbe)>,
    tick: u64,
}

fn error_line(reason: impl Into<String>) -> String {
    json!({"t": "error", "reason": reason.into()}).to_string()
}

impl Sim {
    fn now_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1000.0
    }

    fn conn_of(&self, id: &ReplicaId) -> Option<ConnId> {
        self.server.connection(id).copied()
    }

    fn send_line(&self, conn: ConnId, line: String) {
        if let Some(tx) = self.clients.get(&conn).map(|c| &c.tx) {
            // A closed writer means the client is leaving; Gone follows.
            let _ = tx.send(line);
        }
    }

    fn route(&mut self, out: Vec<(ReplicaId, SignalMessage)>) {
        for (to, msg) in out {
            match self.conn_of(&to) {
                Some(conn) => self.send_line(conn, msg.to_json()),
                None => debug!("dropping signal for departed {to}"),
            }
        }
    }

    fn connect(&mut self, conn: ConnId, tx: Sender<String>) -> Result<()> {
        let out = self.server.handle(ServerEvent::Connect(conn));
        let id = out
            .iter()
            .find_map(|(_, m)| match m {
                SignalMessage::Welcome { id, .. } => Some(id.clone()),
                _ => None,
            })
            .ok_or_else(|| HarnessError::Scenario("signaling produced no welcome".into()))?;
        let now = self.now_ms();
        self.world.add_node(id.as_str());
        let peers: Vec<(ConnId, ReplicaId)> = self.clients.iter().map(|(c, cl)| (*c, cl.id.clone())).collect();
        for (other, other_id) in peers {
            let ch = self.world.connect(other_id.as_str(), id.as_str(), self.cfg.link.clone())?;
            self.channels.insert((other, conn), ch);
            let hops = vec![Hop { channel: ch, from: other_id.to_string(), to: id.to_string() }];
            let probe = RttProbe::new(self.probes.len() as u32, hops, ProbeConfig::default())?;
            probe.start(&mut self.world, now);
            self.probes.push(((other, conn), probe));
        }
        let replica = StateReplica::new(id.clone(), StrategyState::from_spec(&self.cfg.strategy)?);
        info!("client {conn} joined as {id}");
        self.clients.insert(conn, Client { id, tx, replica });
        self.route(out);
        Ok(())
    }

    fn disconnect(&mut self, conn: ConnId) {
        let Some(client) = self.clients.remove(&conn) else {
            return;
        };
        info!("{} left", client.id);
        let gone: Vec<(ConnId, ConnId)> = self.channels.keys().filter(|(a, b)| *a == conn || *b == conn).copied().collect();
        for key in gone {
            if let Some(ch) = self.channels.remove(&key) {
                let _ = self.world.close_channel(ch);
            }
        }
        self.probes.retain(|((a, b), _)| *a != conn && *b != conn);
        let out = self.server.handle(ServerEvent::Disconnect(client.id));
        self.route(out);
    }

    fn line(&mut self, conn: ConnId, line: &str) {
        let Some(id) = self.clients.get(&conn).map(|c| c.id.clone()) else {
            return;
        };
        let v: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return self.send_line(conn, error_line(format!("invalid json: {e}"))),
        };
        if v.get("t").and_then(Value::as_str) == Some("cmd") {
            return self.command(conn, v);
        }
        match SignalMessage::from_json(line) {
            Ok(msg) => {
                let out = self.server.handle(ServerEvent::Inbound(id, msg));
                self.route(out);
            }
            Err(e) => self.send_line(conn, error_line(format!("unknown message: {e}"))),
        }
    }

    fn command(&mut self, conn: ConnId, mut v: Value) {
        let obj = v.as_object_mut().expect("checked t field");
        obj.remove("t");
        let Some(kind) = obj.remove("kind") else {
            return self.send_line(conn, error_line("cmd without kind"));
        };
        obj.insert("do".into(), kind);
        let action: ActionKind = match serde_json::from_value(v) {
            Ok(a) => a,
            Err(e) => return self.send_line(conn, error_line(format!("bad cmd: {e}"))),
        };
        if !matches!(
            action,
            ActionKind::Spawn { .. }
                | ActionKind::Grab { .. }
                | ActionKind::Release { .. }
                | ActionKind::Move { .. }
                | ActionKind::Mode { .. }
                | ActionKind::Strategy { .. }
        ) {
            return self.send_line(conn, error_line(format!("{} is not a client command", action.name())));
        }
        let client = self.clients.get_mut(&conn).expect("known client");
        let reply = match client.replica.apply(&action) {
            Ok(Applied::Spawned(b)) => Some(json!({"t": "spawned", "brick": b.to_string()}).to_string()),
            Ok(Applied::MissingBrick(b)) => Some(error_line(format!("unknown brick {b}"))),
            Ok(_) => None,
            Err(e) => Some(error_line(e.to_string())),
        };
        if let Some(r) = reply {
            self.send_line(conn, r);
        }
    }

    fn advance(&mut self) {
        let now = self.now_ms();
        let mut inbound: Vec<(String, Vec<u8>)> = Vec::new();
        let probes = &mut self.probes;
        self.world.run_until(now, |w, ev| {
            if probes.iter_mut().any(|(_, p)| p.handle(w, &ev)) {
                return;
            }
            if let SimEvent::Delivery { to, payload, .. } = ev {
                inbound.push((to, payload));
            }
        });
        for (to, payload) in inbound {
            let Some(client) = self.clients.values_mut().find(|c| c.id.as_str() == to) else {
                continue;
            };
            let parsed = SyncMessage::from_json(&String::from_utf8_lossy(&payload));
            match parsed.map_err(HarnessError::from).and_then(|m| client.replica.receive(m)) {
                Ok(()) => {}
                Err(e) => warn!("{to}: dropped sync message: {e}"),
            }
        }
    }

    fn exchange(&mut self) {
        let full = self.tick.is_multiple_of(self.cfg.full_every);
        let conns: Vec<ConnId> = self.clients.keys().copied().collect();
        for conn in conns {
            let client = self.clients.get_mut(&conn).expect("listed");
            let from = client.id.to_string();
            let msgs = client.replica.outgoing(full);
            let targets: Vec<ChannelId> = self
                .channels
                .iter()
                .filter(|((a, b), _)| *a == conn || *b == conn)
                .map(|(_, c)| *c)
                .collect();
            for m in msgs {
                let bytes = m.to_json().into_bytes();
                for &ch in &targets {
                    if let Err(e) = self.world.send(ch, &from, bytes.clone()) {
                        warn!("{from}: {e}");
                    }
                }
            }
        }
    }

    fn snapshot(&self, client: &Client) -> String {
        let strategy = client.replica.strategy();
        let bricks: serde_json::Map<String, Value> = client
            .replica
            .doc()
            .bricks()
            .iter()
            .map(|(id, mv)| {
                let t = mv.resolve(strategy);
                let holders: Vec<String> = mv
                    .grabs()
                    .iter()
                    .filter(|(_, g)| g.holding)
                    .map(|(r, _)| r.to_string())
                    .collect();
                (
                    id.to_string(),
                    json!({
                        "pos": t.position,
                        "rot": t.rotation,
                        "scl": t.scale,
                        "holders": holders,
                        "conflicts": mv.conflicts(),
                    }),
                )
            })
            .collect();
        json!({"t": "snapshot", "tick": self.tick, "strategy": strategy, "bricks": bricks}).to_string()
    }

    fn rtt_line(&self) -> String {
        let now = self.now_ms();
        let rows: Vec<Value> = self
            .probes
            .iter()
            .filter_map(|((a, b), p)| {
                let (a, b) = (self.clients.get(a)?, self.clients.get(b)?);
                Some(json!({
                    "pair": Scenario::leg_name(a.id.as_str(), b.id.as_str()),
                    "instantMs": p.instantaneous(),
                    "meanMs": p.window_mean(now),
                    "samples": p.samples().len(),
                }))
            })
            .collect();
        json!({"t": "rtt", "rows": rows}).to_string()
    }

    fn on_tick(&mut self) {
        self.tick += 1;
        self.advance();
        self.exchange();
        for (conn, client) in &self.clients {
            self.send_line(*conn, self.snapshot(client));
        }
        if self.tick.is_multiple_of(self.cfg.rtt_every_ticks) {
            let line = self.rtt_line();
            for conn in self.clients.keys() {
                self.send_line(*conn, line.clone());
            }
        }
    }

    fn run(mut self, rx: Receiver<Msg>) {
        let tick = Duration::from_millis(self.cfg.tick_ms.max(1));
        let mut next = Instant::now() + tick;
        loop {
            let wait = next.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Msg::Connect(conn, tx)) => {
                    if let Err(e) = self.connect(conn, tx.clone()) {
                        let _ = tx.send(error_line(e.to_string()));
                    }
                }
                Ok(Msg::Line(conn, line)) => self.line(conn, &line),
                Ok(Msg::Gone(conn)) => self.disconnect(conn),
                Ok(Msg::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
                Err(RecvTimeoutError::Timeout) => {}
            }
            if Instant::now() >= next {
                self.on_tick();
                next += tick;
            }
        }
    }
}

fn spawn_client(conn: ConnId, stream: TcpStream, sim: Sender<Msg>) -> std::io::Result<()> {
    let (tx, rx) = mpsc::channel::<String>();
    let mut write_half = stream.try_clone()?;
    thread::spawn(move || {
        for line in rx {
            if writeln!(write_half, "{line}").is_err() {
                break;
            }
        }
        let _ = write_half.shutdown(Shutdown::Both);
    });
    if sim.send(Msg::Connect(conn, tx)).is_err() {
        return Ok(());
    }
    thread::spawn(move || {
        let reader = BufReader::new(stream);
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            if sim.send(Msg::Line(conn, line)).is_err() {
                return;
            }
        }
        let _ = sim.send(Msg::Gone(conn));
    });
    Ok(())
}

/// A running server. Dropping it does not stop the server; call [`ServeHandle::shutdown`].
pub struct ServeHandle {
    addr: SocketAddr,
    sim_tx: Sender<Msg>,
    stop_tx: Sender<()>,
    threads: Vec<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        let _ = self.sim_tx.send(Msg::Shutdown);
        let _ = self.stop_tx.send(());
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

/// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
pub fn spawn(cfg: ServeConfig) -> Result<ServeHandle> {
    cfg.link.validate()?;
    let listener = TcpListener::bind(("127.0.0.1", cfg.port))?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let (sim_tx, sim_rx) = mpsc::channel();
    let (stop_tx, stop_rx) = mpsc::channel::<()>();
    let sim = Sim {
        world: SimWorld::new(0),
        started: Instant::now(),
        server: ServerState::new(),
        clients: BTreeMap::new(),
        channels: BTreeMap::new(),
        probes: Vec::new(),
        tick: 0,
        cfg,
    };
    let sim_thread = thread::spawn(move || sim.run(sim_rx));
    let accept_tx = sim_tx.clone();
    let accept_thread = thread::spawn(move || {
        let mut next_conn: ConnId = 0;
        loop {
            if stop_rx.try_recv().is_ok() {
                return;
            }
            match listener.accept() {
                Ok((stream, peer)) => {
                    next_conn += 1;
                    debug!("accepted {peer}");
                    let spawned = stream.set_nonblocking(false).and_then(|_| {
                        stream.set_nodelay(true)?;
                        spawn_client(next_conn, stream, accept_tx.clone())
                    });
                    if let Err(e) = spawned {
                        warn!("client {peer}: {e}");
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    warn!("accept failed: {e}");
                    return;
                }
            }
        }
    });
    info!("serving on {addr}");
    Ok(ServeHandle {
        addr,
        sim_tx,
        stop_tx,
        threads: vec![sim_thread, accept_thread],
    })
}
