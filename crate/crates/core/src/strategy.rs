//! Read-time conflict resolution strategies and the dynamic switcher.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::id::LamportStamp;

/// How concurrent world-space versions collapse into one pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Highest stamp wins.
    #[default]
    Lww,
    /// Mean position and scale, blended rotation.
    Average,
    /// The version written by whoever has held the object longest.
    Constraint,
    /// The version closest to the motion extrapolated `horizon` stamp ticks ahead.
    DeadReckoning { horizon: u64 },
}

impl Strategy {
    pub const DEFAULT_HORIZON: u64 = 1;
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Lww => f.write_str("lww"),
            Strategy::Average => f.write_str("average"),
            Strategy::Constraint => f.write_str("constraint"),
            Strategy::DeadReckoning { horizon } => write!(f, "dead-reckoning:{horizon}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let strategy = match (name, arg) {
            ("lww", None) => Strategy::Lww,
            ("average", None) => Strategy::Average,
            ("constraint", None) => Strategy::Constraint,
            ("dead-reckoning", None) => Strategy::DeadReckoning {
                horizon: Self::DEFAULT_HORIZON,
            },
            ("dead-reckoning", Some(h)) => Strategy::DeadReckoning {
                horizon: h
                    .parse()
                    .map_err(|_| Error::Validation(format!("bad horizon {h:?}")))?,
            },
            _ => return Err(Error::Validation(format!("unknown strategy {s:?}"))),
        };
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Sliding window width in stamp ticks.
    pub window: u64,
    /// Conflicts within the window that trigger escalation.
    pub high: u32,
    /// Conflicts within the window at or below which a quiet window de-escalates.
    pub low: u32,
    pub base: Strategy,
    pub escalated: Strategy,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            window: 20,
            high: 5,
            low: 1,
            base: Strategy::Lww,
            escalated: Strategy::Constraint,
        }
    }
}

/// Picks between a base and an escalated strategy from the recent rate of
/// conflicting updates.
///
/// Switches are at least one full window apart, so a trace hovering between
/// the two thresholds never flaps.
#[derive(Clone, Debug)]
pub struct SwitchController {
    config: SwitchConfig,
    escalated: bool,
    observations: VecDeque<(u64, u32)>,
    last_switch: Option<u64>,
    switches: u64,
}

impl SwitchController {
    pub fn new(config: SwitchConfig) -> Result<Self> {
        if config.low >= config.high {
            return Err(Error::Validation(format!(
                "switch thresholds need low < high, got {} >= {}",
                config.low, config.high
            )));
        }
        if config.window == 0 {
            return Err(Error::Validation("switch window must be positive".into()));
        }
        Ok(Self {
            config,
            escalated: false,
            observations: VecDeque::new(),
            last_switch: None,
            switches: 0,
        })
    }

    pub fn config(&self) -> &SwitchConfig {
        &self.config
    }

    pub fn current(&self) -> Strategy {
        if self.escalated {
            self.config.escalated
        } else {
            self.config.base
        }
    }

    pub fn switches(&self) -> u64 {
        self.switches
    }

    /// Number of conflicts recorded in the window ending at `now`.
    pub fn windowed(&self, now: u64) -> u32 {
        let start = now.saturating_sub(self.config.window);
        self.observations
            .iter()
            .filter(|(t, _)| *t > start)
            .map(|(_, c)| *c)
            .sum()
    }

    /// Records `conflicts` observed at `now` and returns the strategy to use.
    pub fn step(&mut self, conflicts: u32, now: &LamportStamp) -> Strategy {
        let t = now.counter;
        if conflicts > 0 {
            self.observations.push_back((t, conflicts));
        }
        let start = t.saturating_sub(self.config.window);
        while self.observations.front().is_some_and(|(ot, _)| *ot <= start) {
            self.observations.pop_front();
        }

        let count = self.windowed(t);
        let settled = self
            .last_switch
            .is_none_or(|s| t.saturating_sub(s) >= self.config.window);
        let flip = if self.escalated {
            // A full quiet window must have elapsed since escalating.
            settled && self.last_switch.is_some() && count <= self.config.low
        } else {
            settled && count >= self.config.high
        };
        if flip {
            self.escalated = !self.escalated;
            self.last_switch = Some(t);
            self.switches += 1;
        }
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::id::ReplicaId;

    fn at(t: u64) -> LamportStamp {
        LamportStamp::new(t, ReplicaId::new("A").unwrap())
    }

    #[test]
    fn parse_and_print() {
        for s in ["lww", "average", "constraint", "dead-reckoning:4"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert_eq!(
            "dead-reckoning".parse::<Strategy>().unwrap(),
            Strategy::DeadReckoning { horizon: 1 }
        );
        assert!("max".parse::<Strategy>().is_err());
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let cfg = SwitchConfig {
            low: 5,
            high: 5,
            ..Default::default()
        };
        assert!(SwitchController::new(cfg).is_err());
    }

    #[test]
    fn escalates_on_burst() {
        let mut c = SwitchController::new(SwitchConfig::default()).unwrap();
        for t in 1..=4 {
            assert_eq!(c.step(1, &at(t)), Strategy::Lww);
        }
        assert_eq!(c.step(1, &at(5)), Strategy::Constraint);
    }

    #[test]
    fn quiet_window_de_escalates() {
        let mut c = SwitchController::new(SwitchConfig::default()).unwrap();
        assert_eq!(c.step(5, &at(10)), Strategy::Constraint);
        for t in 11..30 {
            assert_eq!(c.step(0, &at(t)), Strategy::Constraint, "t={t}");
        }
        assert_eq!(c.step(0, &at(30)), Strategy::Lww);
        assert_eq!(c.switches(), 2);
    }

    #[test]
    fn old_conflicts_leave_the_window() {
        let mut c = SwitchController::new(SwitchConfig::default()).unwrap();
        c.step(4, &at(1));
        assert_eq!(c.windowed(20), 4);
        assert_eq!(c.step(1, &at(21)), Strategy::Lww);
    }
}
