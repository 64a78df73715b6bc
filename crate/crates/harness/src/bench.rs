//! Latency-by-topology and payload-size benchmarks over RTT probes.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xsync_net::rtt::{percentile, Hop, ProbeConfig, RttProbe};
use xsync_net::simnet::{LinkConfig, SimWorld, MAX_PAYLOAD_BYTES};

use crate::error::{HarnessError, Result};
use crate::scenario::{Topology, RELAY_NODE};

pub const ARCHS: [(&str, Topology); 3] = [
    ("p2p", Topology::Direct),
    ("localRelay", Topology::LocalRelay),
    ("remoteRelay", Topology::RemoteRelay),
];

/// Calibrated one-way leg delays of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ArchLegs {
    pub legs_ms: Vec<f64>,
    #[serde(default)]
    pub expected_rtt_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRowConfig {
    pub name: String,
    /// Indexed like [`ARCHS`].
    pub archs: [ArchLegs; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub name: String,
    pub probe_period_ms: f64,
    pub duration_ms: f64,
    /// Jitter as a fraction of each leg's delay when jitter is on.
    pub jitter_fraction: f64,
    pub rows: Vec<BenchRowConfig>,
}

fn cfg_err(m: String) -> HarnessError {
    HarnessError::Config(m)
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let obj = v.as_object().ok_or_else(|| cfg_err("top level must be an object".into()))?;
        let num = |k: &str, default: f64| -> Result<f64> {
            match obj.get(k) {
                None => Ok(default),
                Some(x) => x.as_f64().ok_or_else(|| cfg_err(format!("{k} must be a number"))),
            }
        };
        let name = obj
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| cfg_err("missing name".into()))?
            .to_string();
        let rows_v = obj
            .get("rows")
            .and_then(Value::as_array)
            .ok_or_else(|| cfg_err("missing rows".into()))?;
        let mut rows = Vec::with_capacity(rows_v.len());
        for (i, r) in rows_v.iter().enumerate() {
            let row_name = r
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| cfg_err(format!("rows[{i}]: missing name")))?;
            let missing: Vec<&str> = ARCHS
                .iter()
                .map(|(k, _)| *k)
                .filter(|k| r.get(*k).is_none())
                .collect();
            if !missing.is_empty() {
                return Err(cfg_err(format!("row {row_name:?} is missing {}", missing.join(", "))));
            }
            let parse = |k: &str| -> Result<ArchLegs> {
                let legs: ArchLegs = serde_json::from_value(r[k].clone())
                    .map_err(|e| cfg_err(format!("row {row_name:?}.{k}: {e}")))?;
                Ok(legs)
            };
            let archs = [parse(ARCHS[0].0)?, parse(ARCHS[1].0)?, parse(ARCHS[2].0)?];
            for ((k, topo), a) in ARCHS.iter().zip(&archs) {
                let want = if topo.is_relay() { 2 } else { 1 };
                if a.legs_ms.len() != want || a.legs_ms.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(cfg_err(format!(
                        "row {row_name:?}.{k}: needs {want} nonnegative leg delay(s)"
                    )));
                }
            }
            rows.push(BenchRowConfig { name: row_name.to_string(), archs });
        }
        let cfg = Self {
            name,
            probe_period_ms: num("probePeriodMs", 1000.0)?,
            duration_ms: num("durationMs", 60_000.0)?,
            jitter_fraction: num("jitterFraction", 0.1)?,
            rows,
        };
        if !(cfg.probe_period_ms > 0.0 && cfg.duration_ms > 0.0 && cfg.jitter_fraction >= 0.0) {
            return Err(cfg_err("probePeriodMs and durationMs must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The calibrated config shipped with the harness.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../configs/measured-latency.json")).expect("bundled config is valid")
    }
}

#[derive(Clone, Copy, Debug)]
struct ProbeRun<'a> {
    legs: &'a [f64],
    jitter_fraction: f64,
    per_byte_ms: f64,
    payload_bytes: usize,
    period_ms: f64,
    duration_ms: f64,
    seed: u64,
}

struct ProbeResult {
    samples: Vec<f64>,
    rejected: u64,
}

/// Two endpoints joined directly (one leg) or through a relay (two legs).
fn probe_once(run: ProbeRun<'_>) -> Result<ProbeResult> {
    let mut w = SimWorld::new(run.seed);
    let link = |d: f64| LinkConfig {
        one_way_delay_ms: d,
        jitter_ms: d * run.jitter_fraction,
        per_byte_ms: run.per_byte_ms,
        ..LinkConfig::default()
    };
    let hops = match run.legs {
        [d] => {
            let ch = w.connect("a", "b", link(*d))?;
            vec![Hop { channel: ch, from: "a".into(), to: "b".into() }]
        }
        [d1, d2] => {
            let c1 = w.connect("a", RELAY_NODE, link(*d1))?;
            let c2 = w.connect(RELAY_NODE, "b", link(*d2))?;
            vec![
                Hop { channel: c1, from: "a".into(), to: RELAY_NODE.into() },
                Hop { channel: c2, from: RELAY_NODE.into(), to: "b".into() },
            ]
        }
        _ => return Err(cfg_err("one or two legs supported".into())),
    };
    let mut probe = RttProbe::new(
        0,
        hops,
        ProbeConfig {
            period_ms: run.period_ms,
            payload_bytes: run.payload_bytes,
            max_pings: Some((run.duration_ms / run.period_ms).ceil() as u64),
            ..ProbeConfig::default()
        },
    )?;
    probe.start(&mut w, 0.0);
    let slack = 4.0 * run.legs.iter().sum::<f64>() * (1.0 + run.jitter_fraction)
        + 4.0 * run.per_byte_ms * run.payload_bytes as f64
        + 1.0;
    w.run_until(run.duration_ms + slack, |w, ev| {
        probe.handle(w, &ev);
    });
    let samples = probe.samples().iter().map(|s| s.rtt_ms).collect();
    Ok(ProbeResult { samples, rejected: probe.rejected() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub scenario: String,
    pub topology: String,
    pub row: String,
    pub arch: String,
    pub mean_rtt_ms: f64,
    pub p95_rtt_ms: f64,
    pub samples: usize,
    #[serde(skip)]
    pub expected_rtt_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub p2p_mean_ms: f64,
    pub remote_mean_ms: f64,
    /// Percentage reduction of the P2P mean relative to the remote relay mean.
    pub reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub config: String,
    pub jitter: bool,
    pub reps: u32,
    pub rows: Vec<BenchRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run_bench(cfg: &BenchConfig, reps: u32, jitter: bool) -> Result<BenchTable> {
    if reps == 0 {
        return Err(cfg_err("reps must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for (ri, row) in cfg.rows.iter().enumerate() {
        for (ai, ((_, topo), legs)) in ARCHS.iter().zip(&row.archs).enumerate() {
            let mut samples = Vec::new();
            for rep in 0..reps {
                let r = probe_once(ProbeRun {
                    legs: &legs.legs_ms,
                    jitter_fraction: if jitter { cfg.jitter_fraction } else { 0.0 },
                    per_byte_ms: 0.0,
                    payload_bytes: 0,
                    period_ms: cfg.probe_period_ms,
                    duration_ms: cfg.duration_ms,
                    seed: (rep as u64) << 16 | (ri as u64) << 4 | ai as u64,
                })?;
                samples.extend(r.samples);
            }
            if samples.is_empty() {
                return Err(cfg_err(format!("row {:?} produced no samples", row.name)));
            }
            rows.push(BenchRow {
                scenario: cfg.name.clone(),
                topology: topo.to_string(),
                row: row.name.clone(),
                arch: topo.arch_label().to_string(),
                mean_rtt_ms: mean(&samples),
                p95_rtt_ms: percentile(samples.clone(), 0.95).expect("nonempty"),
                samples: samples.len(),
                expected_rtt_ms: legs.expected_rtt_ms,
            });
        }
    }
    Ok(BenchTable { config: cfg.name.clone(), jitter, reps, rows })
}

impl BenchTable {
    fn row_means(&self) -> Vec<(&str, [f64; 3])> {
        let mut out: Vec<(&str, [f64; 3])> = Vec::new();
        for chunk in self.rows.chunks(3) {
            out.push((&chunk[0].row, [chunk[0].mean_rtt_ms, chunk[1].mean_rtt_ms, chunk[2].mean_rtt_ms]));
        }
        out
    }

    /// Rows where P2P < local relay < remote relay does not hold.
    pub fn ordering_violations(&self) -> Vec<String> {
        self.row_means()
            .into_iter()
            .filter(|(_, m)| !(m[0] < m[1] && m[1] < m[2]))
            .map(|(name, _)| name.to_string())
            .collect()
    }

    pub fn aggregate(&self) -> Aggregate {
        let means = self.row_means();
        let p2p = means.iter().map(|(_, m)| m[0]).sum::<f64>() / means.len() as f64;
        let remote = means.iter().map(|(_, m)| m[2]).sum::<f64>() / means.len() as f64;
        Aggregate {
            p2p_mean_ms: p2p,
            remote_mean_ms: remote,
            reduction_pct: 100.0 * (1.0 - p2p / remote),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {} | jitter {} | {} rep(s) | per-leg delays are calibrated from the configured RTTs",
            self.config,
            if self.jitter { "on" } else { "off" },
            self.reps
        );
        let _ = writeln!(
            s,
            "# (even split across legs); this checks pipeline arithmetic and ordering, not physical networks"
        );
        let width = self.rows.iter().map(|r| r.row.len()).max().unwrap_or(0).max(15);
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>12}  {:>13}", "Connection", "P2P", "Local relay", "Remote relay");
        for (name, m) in self.row_means() {
            let _ = writeln!(
                s,
                "{:<width$}  {:>8.2}ms  {:>10.2}ms  {:>11.2}ms",
                name, m[0], m[1], m[2]
            );
        }
        let a = self.aggregate();
        let _ = writeln!(
            s,
            "Average: P2P {:.2} ms vs remote relay {:.2} ms, a {:.1}% reduction",
            a.p2p_mean_ms, a.remote_mean_ms, a.reduction_pct
        );
        let bad = self.ordering_violations();
        if bad.is_empty() {
            let _ = writeln!(s, "Ordering P2P < local relay < remote relay holds on every row");
        } else {
            let _ = writeln!(s, "Ordering violated on: {}", bad.join(", "));
        }
        s
    }
}

/// Serialization cost per byte per leg used by the payload bench.
pub const DEFAULT_PER_BYTE_MS: f64 = 0.0005;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PayloadRow {
    pub size_bytes: usize,
    pub topology: String,
    pub arch: String,
    pub mean_rtt_ms: Option<f64>,
    pub p95_rtt_ms: Option<f64>,
    pub samples: usize,
    pub status: String,
}

/// RTT per payload size and architecture, using the first row of `cfg`.
pub fn run_payload_bench(cfg: &BenchConfig, sizes: &[usize], per_byte_ms: f64) -> Result<Vec<PayloadRow>> {
    let row = cfg.rows.first().ok_or_else(|| cfg_err("config has no rows".into()))?;
    let mut out = Vec::new();
    for &size in sizes {
        for ((_, topo), legs) in ARCHS.iter().zip(&row.archs) {
            let r = probe_once(ProbeRun {
                legs: &legs.legs_ms,
                jitter_fraction: 0.0,
                per_byte_ms,
                payload_bytes: size,
                period_ms: cfg.probe_period_ms,
                duration_ms: cfg.duration_ms.min(10_000.0),
                seed: size as u64,
            })?;
            let rejected = r.rejected > 0;
            out.push(PayloadRow {
                size_bytes: size,
                topology: topo.to_string(),
                arch: topo.arch_label().to_string(),
                mean_rtt_ms: (!r.samples.is_empty()).then(|| mean(&r.samples)),
                p95_rtt_ms: percentile(r.samples.clone(), 0.95),
                samples: r.samples.len(),
                status: if rejected {
                    format!("PayloadTooLarge (> {MAX_PAYLOAD_BYTES} bytes)")
                } else {
                    "ok".to_string()
                },
            });
        }
    }
    Ok(out)
}

pub fn payload_csv(rows: &[PayloadRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
