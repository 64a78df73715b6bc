use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use xsync_harness::serve::{spawn, ServeConfig};

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        Self { writer: s.try_clone().unwrap(), reader: BufReader::new(s) }
    }

    fn send(&mut self, v: Value) {
        writeln!(self.writer, "{v}").unwrap();
    }

    fn next(&mut self) -> Value {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        assert!(!line.is_empty(), "server closed the stream");
        serde_json::from_str(&line).unwrap()
    }

    /// Reads until a message satisfies `pred`, within `limit`.
    fn until(&mut self, limit: Duration, mut pred: impl FnMut(&Value) -> bool) -> Value {
        let start = Instant::now();
        loop {
            assert!(start.elapsed() < limit, "timed out");
            let v = self.next();
            if pred(&v) {
                return v;
            }
        }
    }

    fn snapshot_pos(&mut self, brick: &str) -> Option<[f64; 3]> {
        let v = self.until(Duration::from_secs(5), |v| v["t"] == "snapshot");
        let p = v["bricks"].get(brick)?["pos"].as_array()?.clone();
        Some([p[0].as_f64()?, p[1].as_f64()?, p[2].as_f64()?])
    }

    fn wait_pos(&mut self, brick: &str, want: [f64; 3]) -> Duration {
        let start = Instant::now();
        while self.snapshot_pos(brick) != Some(want) {
            assert!(start.elapsed() < Duration::from_secs(5), "{brick} never reached {want:?}");
        }
        start.elapsed()
    }
}

fn cmd(kind: &str, mut extra: Value) -> Value {
    let obj = extra.as_object_mut().unwrap();
    obj.insert("t".into(), json!("cmd"));
    obj.insert("kind".into(), json!(kind));
    extra
}

fn join_two() -> (xsync_harness::serve::ServeHandle, Client, Client) {
    let server = spawn(ServeConfig { port: 0, ..ServeConfig::default() }).unwrap();
    let mut a = Client::connect(server.local_addr());
    let w = a.next();
    assert_eq!(w, json!({"t": "welcome", "id": "p1", "peers": []}));
    let mut b = Client::connect(server.local_addr());
    let w = b.next();
    assert_eq!(w, json!({"t": "welcome", "id": "p2", "peers": ["p1"]}));
    let j = a.until(Duration::from_secs(5), |v| v["t"] != "snapshot");
    assert_eq!(j, json!({"t": "joined", "id": "p2"}));
    (server, a, b)
}

fn spawn_brick(c: &mut Client) -> String {
    c.send(cmd("spawn", json!({"pos": [0.0, 0.0, 0.0]})));
    let v = c.until(Duration::from_secs(5), |v| v["t"] == "spawned");
    v["brick"].as_str().unwrap().to_string()
}

#[test]
fn welcome_and_joined() {
    let (server, mut a, mut b) = join_two();
    a.send(json!({"t": "offer", "from": "p1", "to": "p2", "sdp": "x"}));
    let o = b.until(Duration::from_secs(5), |v| v["t"] == "offer");
    assert_eq!(o, json!({"t": "offer", "from": "p1", "to": "p2", "sdp": "x"}));
    drop(b);
    let left = a.until(Duration::from_secs(5), |v| v["t"] == "left");
    assert_eq!(left["id"], "p2");
    server.shutdown();
}

#[test]
fn move_reaches_other_client() {
    let (server, mut a, mut b) = join_two();
    let brick = spawn_brick(&mut a);
    a.send(cmd("grab", json!({"brick": brick})));
    a.send(cmd("move", json!({"brick": brick, "to": [1.0, 2.0, 3.0]})));
    b.wait_pos(&brick, [1.0, 2.0, 3.0]);
    let v = b.until(Duration::from_secs(5), |v| v["t"] == "snapshot");
    assert_eq!(v["bricks"][&brick]["holders"], json!(["p1"]));
    server.shutdown();
}

#[test]
fn bad_commands_get_errors() {
    let (server, mut a, _b) = join_two();
    a.send(cmd("grab", json!({"brick": "p9:9"})));
    let e = a.until(Duration::from_secs(5), |v| v["t"] == "error");
    assert!(e["reason"].as_str().unwrap().contains("unknown brick"), "{e}");
    a.send(cmd("teleport", json!({})));
    let e = a.until(Duration::from_secs(5), |v| v["t"] == "error");
    assert!(e["reason"].as_str().unwrap().contains("bad cmd"), "{e}");
    a.send(cmd("close", json!({})));
    let e = a.until(Duration::from_secs(5), |v| v["t"] == "error");
    assert!(e["reason"].as_str().unwrap().contains("not a client command"), "{e}");
    server.shutdown();
}

#[test]
fn world_mode_oscillates_then_converges() {
    let (server, mut a, mut b) = join_two();
    let brick = spawn_brick(&mut a);
    b.wait_pos(&brick, [0.0, 0.0, 0.0]);
    a.send(cmd("mode", json!({"brick": brick, "local": false})));
    a.send(cmd("grab", json!({"brick": brick})));
    std::thread::sleep(Duration::from_millis(100));
    b.send(cmd("grab", json!({"brick": brick})));
    let (pa, pb) = ([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]);
    let mut seen = Vec::new();
    for k in 0..6 {
        let (writer, target) = if k % 2 == 0 { (&mut a, pa) } else { (&mut b, pb) };
        writer.send(cmd("move", json!({"brick": brick, "to": target})));
        // Observe at a third vantage point: whichever client did not write.
        let observer = if k % 2 == 0 { &mut b } else { &mut a };
        observer.wait_pos(&brick, target);
        seen.push(target);
    }
    assert!(seen.windows(2).filter(|w| w[0] != w[1]).count() >= 3);
    b.send(cmd("release", json!({"brick": brick})));
    a.send(cmd("move", json!({"brick": brick, "to": pa})));
    a.wait_pos(&brick, pa);
    b.wait_pos(&brick, pa);
    let v = b.until(Duration::from_secs(5), |v| v["t"] == "snapshot");
    assert_eq!(v["bricks"][&brick]["holders"], json!(["p1"]));
    assert_eq!(v["bricks"][&brick]["conflicts"], 0);
    server.shutdown();
}

#[test]
fn reports_rtt() {
    let (server, mut a, _b) = join_two();
    let deadline = Duration::from_secs(5);
    let v = a.until(deadline, |v| v["t"] == "rtt" && v["rows"][0]["samples"].as_u64() > Some(0));
    assert_eq!(v["rows"][0]["pair"], "p1-p2");
    let ms = v["rows"][0]["instantMs"].as_f64().unwrap();
    assert!((19.0..200.0).contains(&ms), "{ms}");
    server.shutdown();
}

#[test]
fn busy_port_is_an_error() {
    let first = spawn(ServeConfig { port: 0, ..ServeConfig::default() }).unwrap();
    let port = first.local_addr().port();
    assert!(spawn(ServeConfig { port, ..ServeConfig::default() }).is_err());
    first.shutdown();
}
