//! In-process network simulation.
//!
//! Nodes implement [`Process`] and only ever talk through messages. The same
//! node code runs under two runtimes:
//!
//! - [`Simulation`]: a single-threaded discrete-event scheduler over a
//!   virtual clock. Fixed seed ⇒ identical event trace.
//! - [`RealtimeNetwork`]: one thread per node, with link latency and node
//!   service time realised as real sleeps. Used for wall-clock benchmarks.
//!
//! Delivery is not FIFO per pair when jitter is non-zero; protocols must
//! tolerate reordering.

mod context;
mod realtime;
pub mod scenario;
mod sim;

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use context::{Context, Process};
pub use realtime::RealtimeNetwork;
pub use sim::Simulation;

/// Microseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0 / 1000
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> Duration {
        Duration::from_micros(self.0.saturating_sub(other.0))
    }

    pub fn after(self, d: Duration) -> SimTime {
        SimTime(self.0 + d.as_micros() as u64)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}ms", self.0 / 1000, self.0 % 1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Orderer,
    Peer,
    Vehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeAddress {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeAddress {
    pub const fn new(kind: NodeKind, index: u32) -> Self {
        NodeAddress { kind, index }
    }
    pub const fn peer(index: u32) -> Self {
        Self::new(NodeKind::Peer, index)
    }
    pub const fn orderer(index: u32) -> Self {
        Self::new(NodeKind::Orderer, index)
    }
    pub const fn vehicle(index: u32) -> Self {
        Self::new(NodeKind::Vehicle, index)
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            NodeKind::Orderer => "orderer",
            NodeKind::Peer => "peer",
            NodeKind::Vehicle => "vehicle",
        };
        write!(f, "{kind}-{}", self.index)
    }
}

/// Latency and loss applied independently to every message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    pub base_latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { base_latency_ms: 5.0, jitter_ms: 2.0, loss_rate: 0.0 }
    }
}

impl LinkModel {
    pub fn zero() -> Self {
        LinkModel { base_latency_ms: 0.0, jitter_ms: 0.0, loss_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.base_latency_ms >= 0.0 && self.jitter_ms >= 0.0 && (0.0..=1.0).contains(&self.loss_rate);
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidLink(*self))
        }
    }

    /// Returns `None` if the message is lost.
    pub fn sample(&self, rng: &mut impl Rng) -> Option<Duration> {
        if self.loss_rate > 0.0 && rng.gen_bool(self.loss_rate) {
            return None;
        }
        let base = self.base_latency_ms * 1000.0;
        let jitter = self.jitter_ms * 1000.0;
        let us = if jitter > 0.0 { base + rng.gen_range(-jitter..=jitter) } else { base };
        Some(Duration::from_micros(us.max(0.0).round() as u64))
    }
}

/// Time a node is busy handling a message: a fixed part plus a part
/// proportional to the bytes it must process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub per_message_us: u64,
    pub per_kib_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { per_message_us: 1000, per_kib_us: 200 }
    }
}

impl CostModel {
    pub fn free() -> Self {
        CostModel { per_message_us: 0, per_kib_us: 0 }
    }

    pub fn for_bytes(&self, bytes: usize) -> Duration {
        Duration::from_micros(self.per_message_us + (bytes as u64 * self.per_kib_us) / 1024)
    }
}

/// What the runtime needs to know about a message type.
pub trait WireMessage: Clone + Send + 'static {
    fn kind(&self) -> &'static str;
    fn wire_len(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timed<E> {
    pub at: SimTime,
    pub node: NodeAddress,
    pub event: E,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_partition: u64,
    pub dropped_crashed: u64,
}

impl NetStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_loss + self.dropped_partition + self.dropped_crashed
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("unknown address {0}")]
    UnknownAddress(NodeAddress),
    #[error("deadline exceeded after {elapsed:?}")]
    DeadlineExceeded { elapsed: Duration },
    #[error("invalid link model {0:?}")]
    InvalidLink(LinkModel),
}

/// Unordered pair used for partition bookkeeping.
pub(crate) fn pair(a: NodeAddress, b: NodeAddress) -> (NodeAddress, NodeAddress) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Per-node RNG stream derived from the run seed and the node address.
pub(crate) fn node_seed(seed: u64, addr: NodeAddress) -> u64 {
    let kind = match addr.kind {
        NodeKind::Orderer => 1u64,
        NodeKind::Peer => 2,
        NodeKind::Vehicle => 3,
    };
    seed ^ (kind << 56) ^ ((addr.index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Everything left once a run has stopped.
pub struct Finished<M, E> {
    pub nodes: std::collections::BTreeMap<NodeAddress, Box<dyn Process<M, E>>>,
    pub events: Vec<Timed<E>>,
    pub stats: NetStats,
    pub elapsed: Duration,
}

impl<M: 'static, E: 'static> Finished<M, E> {
    pub fn node<T: 'static>(&self, addr: NodeAddress) -> Option<&T> {
        self.nodes.get(&addr)?.as_any().downcast_ref()
    }
}

/// Common driver surface over both runtimes.
pub trait Runtime<M, E> {
    fn now(&self) -> SimTime;
    /// Runs until `cond` holds over the event log or `timeout` elapses.
    fn run_until_events(
        &mut self,
        cond: &mut dyn FnMut(&[Timed<E>]) -> bool,
        timeout: Duration,
    ) -> Result<Duration, SimError>;
    fn crash(&mut self, addr: NodeAddress) -> Result<(), SimError>;
    fn restart(&mut self, addr: NodeAddress) -> Result<(), SimError>;
    fn partition(&mut self, a: &[NodeAddress], b: &[NodeAddress]);
    fn heal_all(&mut self);
    fn finish(self: Box<Self>) -> Finished<M, E>;
}

#[cfg(test)]
mod tests;
