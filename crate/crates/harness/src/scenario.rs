//! Scenario files: replicas, topology, links and a timed action script.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xsync_core::{BrickId, ReplicaId, Strategy, SwitchConfig, UnitQuaternion, Vector3};
use xsync_net::LinkConfig;

use crate::error::{HarnessError, Result};

/// Scenarios shipped with the harness, addressable by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig-mv-replay", include_str!("../scenarios/fig-mv-replay.json")),
    ("oscillation-lww", include_str!("../scenarios/oscillation-lww.json")),
    ("gravity-gate", include_str!("../scenarios/gravity-gate.json")),
    ("op-translation", include_str!("../scenarios/op-translation.json")),
    ("relay-closure", include_str!("../scenarios/relay-closure.json")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Full mesh of peer channels set up through signaling.
    Direct,
    LocalRelay,
    RemoteRelay,
}

impl Topology {
    pub fn is_relay(self) -> bool {
        !matches!(self, Topology::Direct)
    }

    pub fn arch_label(self) -> &'static str {
        match self {
            Topology::Direct => "P2P",
            Topology::LocalRelay => "Local relay",
            Topology::RemoteRelay => "Remote relay",
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Direct => "direct",
            Topology::LocalRelay => "local-relay",
            Topology::RemoteRelay => "remote-relay",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrdtKind {
    Op,
    State,
}

/// A fixed read strategy, or the conflict-rate switcher.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySpec {
    Fixed(Strategy),
    Dynamic { dynamic: SwitchConfig },
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec::Fixed(Strategy::Lww)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ExchangeConfig {
    pub period_ms: f64,
    /// Every `full_every`-th round sends every brick, not just changed ones.
    pub full_every: u64,
    /// Extra time after the script for rounds of full exchange.
    pub settle_ms: f64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            period_ms: 50.0,
            full_every: 5,
            settle_ms: 30_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub topology: Topology,
    /// `"default"` applies to every leg; legs are named `"A-B"` (sorted)
    /// for peer channels and `"A-relay"` for relay legs.
    #[serde(default)]
    pub links: BTreeMap<String, LinkConfig>,
    pub crdt: CrdtKind,
    #[serde(default)]
    pub strategy: StrategySpec,
    pub replicas: Vec<ReplicaId>,
    pub duration_ms: f64,
    #[serde(default)]
    pub exchange: ExchangeConfig,
    #[serde(default = "default_true")]
    pub timeline: bool,
    /// RTT probe period; `None` disables probing.
    #[serde(default = "default_probe_period")]
    pub probe_period_ms: Option<f64>,
    #[serde(default)]
    pub script: Vec<Action>,
}

fn default_true() -> bool {
    true
}

fn default_probe_period() -> Option<f64> {
    Some(1000.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub at: f64,
    pub replica: ReplicaId,
    #[serde(flatten)]
    pub kind: ActionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "snake_case")]
pub enum ActionKind {
    Spawn {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pos: Option<Vector3>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rot: Option<UnitQuaternion>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scl: Option<Vector3>,
    },
    Grab {
        brick: BrickId,
    },
    Release {
        brick: BrickId,
    },
    /// Absolute `to` or relative `by`; rotation and scale are absolute.
    Move {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        brick: Option<BrickId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Vector3>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        by: Option<Vector3>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rot: Option<UnitQuaternion>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scl: Option<Vector3>,
    },
    Mode {
        brick: BrickId,
        local: bool,
    },
    Strategy {
        strategy: Strategy,
    },
    RuleTick {
        rule: ReplicaId,
        #[serde(rename = "fallSpeed")]
        fall_speed: f64,
        dt: f64,
        #[serde(default = "default_true")]
        gate: bool,
    },
    /// Closes the channel toward `peer`, or the relay leg when `peer` is absent.
    Close {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peer: Option<ReplicaId>,
    },
    Partition {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        peer: Option<ReplicaId>,
        #[serde(rename = "forMs")]
        for_ms: f64,
    },
}

impl ActionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::Spawn { .. } => "spawn",
            ActionKind::Grab { .. } => "grab",
            ActionKind::Release { .. } => "release",
            ActionKind::Move { .. } => "move",
            ActionKind::Mode { .. } => "mode",
            ActionKind::Strategy { .. } => "strategy",
            ActionKind::RuleTick { .. } => "rule_tick",
            ActionKind::Close { .. } => "close",
            ActionKind::Partition { .. } => "partition",
        }
    }
}

pub const RELAY_NODE: &str = "relay";

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| HarnessError::Scenario(format!("parse error: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Scenario(m) => HarnessError::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn bundled(name: &str) -> Option<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_json(text).expect("bundled scenarios are valid"))
    }

    /// Loads a bundled scenario by name, otherwise a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match Self::bundled(name_or_path) {
            Some(s) => Ok(s),
            None => Self::load(Path::new(name_or_path)),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    pub fn leg_name(a: &str, b: &str) -> String {
        if a <= b {
            format!("{a}-{b}")
        } else {
            format!("{b}-{a}")
        }
    }

    pub fn link_for(&self, a: &str, b: &str) -> LinkConfig {
        self.links
            .get(&Self::leg_name(a, b))
            .or_else(|| self.links.get("default"))
            .cloned()
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.replicas.is_empty() {
            return bad("at least one replica is required".into());
        }
        for (i, r) in self.replicas.iter().enumerate() {
            if self.replicas[..i].contains(r) {
                return bad(format!("replicas: {r} declared twice"));
            }
            if r.is_rule() || r.as_str() == RELAY_NODE {
                return bad(format!("replicas: {r} is a reserved id"));
            }
        }
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return bad(format!("durationMs {} must be nonnegative", self.duration_ms));
        }
        let ex = &self.exchange;
        if !(ex.period_ms > 0.0) || ex.full_every == 0 || !(ex.settle_ms >= 0.0) {
            return bad("exchange: periodMs > 0, fullEvery >= 1 and settleMs >= 0 required".into());
        }
        if self.probe_period_ms.is_some_and(|p| !(p > 0.0)) {
            return bad("probePeriodMs must be positive".into());
        }
        for (name, cfg) in &self.links {
            cfg.validate()
                .map_err(|e| HarnessError::Scenario(format!("links.{name}: {e}")))?;
            if name != "default" && !self.is_leg(name) {
                return bad(format!("links.{name}: no such leg in a {} topology", self.topology));
            }
        }
        for (i, a) in self.script.iter().enumerate() {
            let at = |m: String| HarnessError::Scenario(format!("script[{i}] ({}): {m}", a.kind.name()));
            if !self.replicas.contains(&a.replica) {
                return Err(at(format!("replica {} is not declared", a.replica)));
            }
            if !(a.at >= 0.0 && a.at <= self.duration_ms) {
                return Err(at(format!("time {} outside [0, {}]", a.at, self.duration_ms)));
            }
            self.validate_action(a).map_err(at)?;
        }
        Ok(())
    }

    fn is_leg(&self, name: &str) -> bool {
        let Some((a, b)) = name.split_once('-') else {
            return false;
        };
        let declared = |x: &str| self.replicas.iter().any(|r| r.as_str() == x);
        if self.topology.is_relay() {
            declared(a) && b == RELAY_NODE
        } else {
            declared(a) && declared(b) && a < b
        }
    }

    fn validate_action(&self, a: &Action) -> std::result::Result<(), String> {
        let op = self.crdt == CrdtKind::Op;
        match &a.kind {
            ActionKind::Move { to, by, brick, .. } => {
                if to.is_some() == by.is_some() {
                    return Err("exactly one of `to` and `by` is required".into());
                }
                if op == brick.is_some() {
                    return Err(if op {
                        "op scenarios replicate a single object; omit `brick`".into()
                    } else {
                        "`brick` is required".into()
                    });
                }
                if scl_invalid(a) {
                    return Err("scale must be positive".into());
                }
            }
            ActionKind::Spawn { .. } if scl_invalid(a) => return Err("scale must be positive".into()),
            ActionKind::Spawn { .. }
            | ActionKind::Grab { .. }
            | ActionKind::Release { .. }
            | ActionKind::Mode { .. }
            | ActionKind::RuleTick { .. }
                if op =>
            {
                return Err("not available in op scenarios".into());
            }
            ActionKind::RuleTick { rule, dt, fall_speed, .. } => {
                if !rule.is_rule() {
                    return Err(format!("rule id {rule} must start with RULE:"));
                }
                if !(*dt > 0.0) || !fall_speed.is_finite() {
                    return Err("dt must be positive and fallSpeed finite".into());
                }
            }
            ActionKind::Close { peer } | ActionKind::Partition { peer, .. } => {
                match (self.topology.is_relay(), peer) {
                    (false, None) => return Err("`peer` is required in a direct topology".into()),
                    (true, Some(_)) => return Err("relay legs are closed without `peer`".into()),
                    (false, Some(p)) if !self.replicas.contains(p) || *p == a.replica => {
                        return Err(format!("peer {p} is not another declared replica"));
                    }
                    _ => {}
                }
                if let ActionKind::Partition { for_ms, .. } = a.kind {
                    if !(for_ms > 0.0) {
                        return Err("forMs must be positive".into());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn scl_invalid(a: &Action) -> bool {
    let scl = match &a.kind {
        ActionKind::Spawn { scl, .. } | ActionKind::Move { scl, .. } => scl,
        _ => return false,
    };
    scl.is_some_and(|s| !s.is_positive())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "topology": "direct", "crdt": "state",
        "replicas": ["A", "B"], "durationMs": 100,
        "script": [{"at": 0, "replica": "A", "do": "spawn"}]
    }"#;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(s.name, *name);
        }
    }

    #[test]
    fn minimal_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.exchange, ExchangeConfig::default());
        assert_eq!(s.strategy, StrategySpec::Fixed(Strategy::Lww));
        assert_eq!(s.link_for("B", "A"), LinkConfig::default());
    }

    #[test]
    fn strategy_forms() {
        let fixed: StrategySpec = serde_json::from_str(r#""dead-reckoning:2""#).unwrap();
        assert_eq!(fixed, StrategySpec::Fixed(Strategy::DeadReckoning { horizon: 2 }));
        let dynamic: StrategySpec = serde_json::from_str(
            r#"{"dynamic": {"window": 20, "high": 5, "low": 1, "base": "lww", "escalated": "constraint"}}"#,
        )
        .unwrap();
        assert!(matches!(dynamic, StrategySpec::Dynamic { .. }));
    }

    #[test]
    fn undeclared_replica_is_named() {
        let text = MINIMAL.replace(r#""replica": "A""#, r#""replica": "Z""#);
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("script[0] (spawn): replica Z is not declared"), "{err}");
    }

    #[test]
    fn late_action_is_rejected() {
        let text = MINIMAL.replace(r#""at": 0"#, r#""at": 500"#);
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("outside [0, 100]"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = MINIMAL.replace(r#""durationMs": 100"#, r#""durationMs": "soon""#);
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_leg_is_rejected() {
        let text = MINIMAL.replace(
            r#""crdt""#,
            r#""links": {"A-C": {"oneWayDelayMs": 1}}, "crdt""#,
        );
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("links.A-C"), "{err}");
    }

    #[test]
    fn move_needs_one_target() {
        let text = MINIMAL.replace(
            r#""do": "spawn""#,
            r#""do": "move", "brick": "A:1", "to": [0,0,0], "by": [1,0,0]"#,
        );
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("exactly one of"), "{err}");
    }

    #[test]
    fn round_trips() {
        for (name, _) in BUNDLED {
            let s = Scenario::bundled(name).unwrap();
            assert_eq!(Scenario::from_json(&s.to_json_pretty()).unwrap(), s);
        }
    }
}
