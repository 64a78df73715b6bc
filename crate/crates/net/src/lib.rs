//! Peer signaling and a deterministic network simulator.

pub mod conformance;
pub mod rtt;
pub mod signaling;
pub mod simnet;

pub use rtt::{Hop, ProbeConfig, RttProbe, RttSample};
pub use signaling::{ClientSession, ServerState, SignalMessage};
pub use simnet::{ChannelId, LinkConfig, SimError, SimEvent, SimWorld, MAX_PAYLOAD_BYTES};
