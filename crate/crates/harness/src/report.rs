use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use xsync_core::{Strategy, TransformSnapshot, Vector3};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TimelineEntry {
    pub t_ms: f64,
    pub replica: String,
    pub brick: String,
    pub pos: Vector3,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RttRow {
    pub pair: String,
    pub path: String,
    pub instant_ms: Option<f64>,
    pub mean_ms: Option<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Counters {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub rejected: u64,
    pub duplicated: u64,
    pub in_flight: u64,
    pub closures: u64,
    pub renegotiations: u64,
    pub signal_messages: u64,
    pub actions_applied: u64,
    pub actions_noop: u64,
    pub actions_skipped: u64,
    pub actions_failed: u64,
    pub strategy_switches: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub topology: String,
    pub crdt: String,
    pub converged: bool,
    pub invariant_errors: Vec<String>,
    pub end_ms: f64,
    pub digests: BTreeMap<String, String>,
    pub strategies: BTreeMap<String, Strategy>,
    pub resolved: BTreeMap<String, BTreeMap<String, TransformSnapshot>>,
    pub rtt: Vec<RttRow>,
    pub counters: Counters,
    pub timeline: Vec<TimelineEntry>,
}

impl RunReport {
    /// Converged with no invariant violations.
    pub fn ok(&self) -> bool {
        self.converged && self.invariant_errors.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn write_timeline_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_ms", "replica", "brick", "x", "y", "z"])?;
        for e in &self.timeline {
            w.write_record([
                e.t_ms.to_string(),
                e.replica.clone(),
                e.brick.clone(),
                e.pos.x.to_string(),
                e.pos.y.to_string(),
                e.pos.z.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json` and `timeline.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        let f = std::fs::File::create(dir.join("timeline.csv"))?;
        self.write_timeline_csv(f)
    }

    /// Positions one replica resolved for `brick`, collapsed to the points
    /// where the value changed.
    pub fn trace(&self, replica: &str, brick: &str) -> Vec<(f64, Vector3)> {
        self.timeline
            .iter()
            .filter(|e| e.replica == replica && e.brick == brick)
            .map(|e| (e.t_ms, e.pos))
            .collect()
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: seed={} converged={} invariant_errors={} end={}ms sent={} lost={} rejected={} renegotiations={}",
            self.scenario,
            self.seed,
            self.converged,
            self.invariant_errors.len(),
            self.end_ms,
            self.counters.sent,
            self.counters.lost,
            self.counters.rejected,
            self.counters.renegotiations
        )
    }
}

/// Number of switches between `a` and `b` in `values`, ignoring other values.
pub fn alternations(values: &[Vector3], a: Vector3, b: Vector3, tol: f64) -> usize {
    let labels: Vec<bool> = values
        .iter()
        .filter_map(|v| {
            if v.max_abs_diff(a) <= tol {
                Some(true)
            } else if v.max_abs_diff(b) <= tol {
                Some(false)
            } else {
                None
            }
        })
        .collect();
    labels.windows(2).filter(|w| w[0] != w[1]).count()
}
