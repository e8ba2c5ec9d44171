//! Benchmark runner: throughput, update-to-notification latency and
//! single-failure tolerance, emitted as CSV/JSON tables.

mod fault;
mod tables;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use fault::{run_fault_bench, FaultPlan, FaultReport, OrdererTarget};
pub use tables::{emit_tables, ratio_rows, RatioRow, TablePaths};

use crate::contracts::ZoneId;
use crate::deployment::COMPANY_ZONES;
use crate::fleet::{ContractMix, RequestPlan, SubmitMode, Workload};
use crate::ledger::TransactionId;
use crate::message::{Event, Message};
use crate::netsim::{CostModel, Finished, LinkModel, NodeAddress, Runtime, SimError, SimTime, Timed};
use crate::ordering::BlockCutPolicy;
use crate::peer::EndorsementPolicy;
use crate::system::{Clock, NetworkConfig, System, VehicleSpec};

pub const PAPER_PAYLOAD_SIZES: [u32; 4] = [16, 32, 64, 100];

/// Block limits used by the benches: the default count and timeout, with
/// room for a full multicast window of 100 KiB envelopes so cells are never
/// cut by size.
pub fn bench_cut_policy() -> BlockCutPolicy {
    BlockCutPolicy { max_bytes: 2 * 1024 * 1024, ..BlockCutPolicy::default() }
}

/// Cells whose failure rate exceeds this abort the run.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub payload_sizes: Vec<u32>,
    pub requests_per_vehicle: u64,
    pub vehicles: usize,
    pub peers: u32,
    pub orderers: u32,
    pub modes: Vec<SubmitMode>,
    pub clock: Clock,
    pub seed: u64,
    pub link: LinkModel,
    pub cost: CostModel,
    pub cut: BlockCutPolicy,
    pub policy: EndorsementPolicy,
    /// In-flight requests per targeted peer.
    pub window: usize,
    /// Per cell, in the chosen clock.
    pub cell_timeout_s: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            payload_sizes: PAPER_PAYLOAD_SIZES.to_vec(),
            requests_per_vehicle: 100,
            vehicles: 3,
            peers: 3,
            orderers: 3,
            modes: vec![SubmitMode::Single, SubmitMode::Multiple],
            clock: Clock::Real,
            seed: 1,
            link: LinkModel::default(),
            cost: CostModel::default(),
            cut: bench_cut_policy(),
            policy: EndorsementPolicy::default(),
            window: 1,
            cell_timeout_s: 600,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidConfig(m.to_string()));
        if self.payload_sizes.is_empty() || self.payload_sizes.contains(&0) {
            return bad("payload sizes must be non-empty and positive");
        }
        if self.requests_per_vehicle == 0 || self.vehicles == 0 || self.orderers == 0 || self.window == 0 {
            return bad("requests, vehicles, orderers and window must be positive");
        }
        if self.modes.is_empty() {
            return bad("at least one mode is required");
        }
        if self.policy.required == 0 || (self.peers as usize) < self.policy.required {
            return bad("peers must cover the endorsement policy");
        }
        if self.cell_timeout_s == 0 {
            return bad("cell timeout must be positive");
        }
        self.link.validate().map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        if !self.cut.is_valid() {
            return bad("block cut policy limits must be positive");
        }
        Ok(())
    }

    fn network(&self) -> NetworkConfig {
        NetworkConfig {
            seed: self.seed,
            peers: self.peers,
            orderers: self.orderers,
            link: self.link,
            cost: self.cost,
            cut: self.cut,
            policy: self.policy,
            ..NetworkConfig::default()
        }
    }

    fn cell_timeout(&self) -> Duration {
        Duration::from_secs(self.cell_timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: SubmitMode,
    pub payload_kib: u32,
    pub tx_per_s: f64,
    pub kib_per_s: f64,
    pub s_per_tx: f64,
    pub failures: u64,
    /// Transactions counted towards throughput.
    pub committed: u64,
    /// Mean per-request span, start to completion (or notification).
    pub mean_latency_s: f64,
    /// Measurement window in the run's clock.
    pub span_s: f64,
    /// Real time the cell took to run.
    pub wall_time_s: f64,
}

impl MetricsRow {
    fn new(
        mode: SubmitMode,
        payload_kib: u32,
        committed: u64,
        failures: u64,
        span: Duration,
        latencies: &[Duration],
    ) -> Self {
        let span_s = span.as_secs_f64();
        let tx_per_s = if span_s > 0.0 { committed as f64 / span_s } else { 0.0 };
        let s_per_tx = if committed > 0 { span_s / committed as f64 } else { 0.0 };
        let mean_latency_s = if latencies.is_empty() {
            0.0
        } else {
            latencies.iter().map(Duration::as_secs_f64).sum::<f64>() / latencies.len() as f64
        };
        MetricsRow {
            mode,
            payload_kib,
            tx_per_s,
            kib_per_s: tx_per_s * payload_kib as f64,
            s_per_tx,
            failures,
            committed,
            mean_latency_s,
            span_s,
            wall_time_s: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("BenchAborted: {mode} {payload_kib} KiB had {failures} failures out of {total}")]
    BenchAborted { mode: SubmitMode, payload_kib: u32, failures: u64, total: u64 },
    #[error("cell {mode} {payload_kib} KiB did not finish: {resolved} of {total} requests resolved")]
    Incomplete { mode: SubmitMode, payload_kib: u32, resolved: u64, total: u64 },
    #[error("accounting mismatch for {mode} {payload_kib} KiB: {committed} completed, {on_chain} valid on chain")]
    AccountingMismatch { mode: SubmitMode, payload_kib: u32, committed: u64, on_chain: u64 },
    #[error("FaultBenchFailed: {0}")]
    FaultBenchFailed(String),
    #[error("no rows to emit")]
    EmptyRows,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Incremental view over an event trace, fed from a cursor so repeated
/// polling stays linear.
#[derive(Debug, Default, Clone)]
pub(crate) struct Tally {
    cursor: usize,
    pub started: HashMap<(NodeAddress, u64), SimTime>,
    pub completed: Vec<(NodeAddress, u64, TransactionId, SimTime)>,
    pub failed: Vec<(NodeAddress, u64, SimTime)>,
    pub txid_request: HashMap<TransactionId, (NodeAddress, u64)>,
    pub notified: Vec<(NodeAddress, TransactionId, SimTime)>,
    pub cut_height: BTreeMap<NodeAddress, u64>,
    pub heights: BTreeMap<NodeAddress, u64>,
    pub leaders: Vec<(SimTime, NodeAddress, u64)>,
}

impl Tally {
    pub fn feed(&mut self, events: &[Timed<Event>]) {
        for e in &events[self.cursor.min(events.len())..] {
            match &e.event {
                Event::RequestStarted { request } => {
                    self.started.entry((e.node, *request)).or_insert(e.at);
                }
                Event::Proposed { request, txid, .. } => {
                    self.txid_request.insert(*txid, (e.node, *request));
                }
                Event::RequestCompleted { request, txid, .. } => self.completed.push((e.node, *request, *txid, e.at)),
                Event::RequestFailed { request, .. } => self.failed.push((e.node, *request, e.at)),
                Event::Notified { txid, .. } => self.notified.push((e.node, *txid, e.at)),
                Event::BlockCut { number, .. } => {
                    let h = self.cut_height.entry(e.node).or_default();
                    *h = (*h).max(number + 1);
                }
                Event::BlockCommitted { number, .. } => {
                    let h = self.heights.entry(e.node).or_default();
                    *h = (*h).max(number + 1);
                }
                Event::LeaderElected { term } => self.leaders.push((e.at, e.node, *term)),
                _ => {}
            }
        }
        self.cursor = events.len();
    }

    pub fn resolved_by(&self, node: NodeAddress) -> u64 {
        (self.completed.iter().filter(|c| c.0 == node).count() + self.failed.iter().filter(|f| f.0 == node).count())
            as u64
    }

    pub fn resolved(&self) -> u64 {
        (self.completed.len() + self.failed.len()) as u64
    }

    pub fn first_start(&self) -> Option<SimTime> {
        self.started.values().min().copied()
    }

    /// Highest block number any orderer cut, plus one.
    pub fn ordered_height(&self) -> u64 {
        self.cut_height.values().max().copied().unwrap_or(0)
    }

    pub fn current_leader(&self) -> Option<NodeAddress> {
        self.leaders.iter().max_by_key(|(at, _, term)| (*term, *at)).map(|(_, n, _)| *n)
    }

    pub fn latencies(&self) -> Vec<Duration> {
        self.completed
            .iter()
            .filter_map(|(n, r, _, at)| Some(at.saturating_sub(*self.started.get(&(*n, *r))?)))
            .collect()
    }
}

/// Runs until every live peer has committed everything the orderers cut.
pub(crate) fn settle(
    rt: &mut dyn Runtime<Message, Event>,
    tally: &mut Tally,
    live_peers: &[NodeAddress],
    timeout: Duration,
) {
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            let target = tally.ordered_height();
            live_peers.iter().all(|p| tally.heights.get(p).copied().unwrap_or(0) >= target)
        },
        timeout,
    );
}

fn valid_on_chain(finished: &Finished<Message, Event>, peer: NodeAddress) -> u64 {
    finished
        .node::<crate::peer::PeerNode>(peer)
        .map(|p| p.state().chain().blocks().iter().flat_map(|b| &b.validity).filter(|f| f.is_valid()).count() as u64)
        .unwrap_or(0)
}

fn check_failures(mode: SubmitMode, payload_kib: u32, failures: u64, total: u64) -> Result<(), BenchError> {
    if failures as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(BenchError::BenchAborted { mode, payload_kib, failures, total });
    }
    Ok(())
}

fn plan(mode: SubmitMode, payload_kib: u32, count: u64, mix: ContractMix) -> RequestPlan {
    RequestPlan::new(payload_kib, count, mode, mix)
}

/// One cell of the throughput table.
pub fn run_throughput_cell(
    config: &BenchmarkConfig,
    mode: SubmitMode,
    payload_kib: u32,
) -> Result<MetricsRow, BenchError> {
    let wall = Instant::now();
    let count = config.requests_per_vehicle;
    let vehicles: Vec<_> = (0..config.vehicles)
        .map(|i| {
            let mut v = VehicleSpec::fleet_member(
                i,
                config.peers,
                Workload::Plan(plan(mode, payload_kib, count, ContractMix::UPDATES)),
            );
            v.window = config.window;
            v
        })
        .collect();
    let system = System::new(config.network(), vehicles);
    let total = count * config.vehicles as u64;
    let mut rt = system.launch(config.clock)?;
    let mut tally = Tally::default();
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            tally.resolved() >= total
        },
        config.cell_timeout(),
    );
    if tally.resolved() < total {
        return Err(BenchError::Incomplete { mode, payload_kib, resolved: tally.resolved(), total });
    }
    settle(rt.as_mut(), &mut tally, &system.peer_addresses(), Duration::from_secs(10));
    let finished = rt.finish();
    let committed = tally.completed.len() as u64;
    let failures = tally.failed.len() as u64;
    check_failures(mode, payload_kib, failures, total)?;
    let on_chain = valid_on_chain(&finished, NodeAddress::peer(0));
    if on_chain < committed {
        return Err(BenchError::AccountingMismatch { mode, payload_kib, committed, on_chain });
    }
    let first = tally.first_start().unwrap_or_default();
    let last = tally.completed.iter().map(|c| c.3).max().unwrap_or(first);
    let mut row =
        MetricsRow::new(mode, payload_kib, committed, failures, last.saturating_sub(first), &tally.latencies());
    row.wall_time_s = wall.elapsed().as_secs_f64();
    log::info!("throughput {mode} {payload_kib} KiB: {:.3} tx/s", row.tx_per_s);
    Ok(row)
}

/// Transactions per second for every (mode, size) cell, each on a fresh
/// network.
pub fn run_throughput_bench(config: &BenchmarkConfig) -> Result<Vec<MetricsRow>, BenchError> {
    config.validate()?;
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for &size in &config.payload_sizes {
            rows.push(run_throughput_cell(config, mode, size)?);
        }
    }
    Ok(rows)
}

/// Designated sender and receiver in the notification bench.
pub const NOTIFY_SENDER: u32 = 0;
pub const NOTIFY_RECEIVER: u32 = 1;

/// One cell of the notification table: vehicle A reports incidents, and
/// the clock stops when vehicle B (homed at another peer) hears of them.
pub fn run_notify_cell(config: &BenchmarkConfig, mode: SubmitMode, payload_kib: u32) -> Result<MetricsRow, BenchError> {
    let wall = Instant::now();
    let count = config.requests_per_vehicle;
    let vehicles: Vec<_> = (0..config.vehicles.max(2))
        .map(|i| {
            let home = (i as u32 + 1) % config.peers;
            if i as u32 == NOTIFY_SENDER {
                let mut p = plan(mode, payload_kib, count, ContractMix::REPORTS);
                // Pipelined reports go to distinct zones so they never race
                // for the same zone head.
                p.report_zones = (0..config.peers)
                    .map(|z| {
                        ZoneId::new(
                            COMPANY_ZONES.get(z as usize).map_or_else(|| format!("zone-{z}"), |s| s.to_string()),
                        )
                    })
                    .collect();
                let mut v = VehicleSpec::new(COMPANY_ZONES[0], home, Workload::Plan(p));
                v.window = config.window;
                v
            } else {
                VehicleSpec::new(COMPANY_ZONES[i % COMPANY_ZONES.len()], home, Workload::Idle)
            }
        })
        .collect();
    let system = System::new(config.network(), vehicles);
    let (a, b) = (NodeAddress::vehicle(NOTIFY_SENDER), NodeAddress::vehicle(NOTIFY_RECEIVER));
    let mut rt = system.launch(config.clock)?;
    let mut tally = Tally::default();
    let heard =
        |t: &Tally| -> BTreeSet<TransactionId> { t.notified.iter().filter(|n| n.0 == b).map(|n| n.1).collect() };
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            let heard = heard(&tally);
            tally.resolved_by(a) >= count && tally.completed.iter().filter(|c| c.0 == a).all(|c| heard.contains(&c.2))
        },
        config.cell_timeout(),
    );
    if tally.resolved_by(a) < count {
        return Err(BenchError::Incomplete { mode, payload_kib, resolved: tally.resolved_by(a), total: count });
    }
    // Give stragglers a moment before counting misses.
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            let heard = heard(&tally);
            tally.completed.iter().filter(|c| c.0 == a).all(|c| heard.contains(&c.2))
        },
        Duration::from_secs(5),
    );
    drop(rt.finish());
    let heard_at: HashMap<TransactionId, SimTime> =
        tally.notified.iter().filter(|n| n.0 == b).map(|n| (n.1, n.2)).collect();
    let mut latencies = Vec::new();
    let mut last = SimTime::default();
    for (_, _, txid, _) in tally.completed.iter().filter(|c| c.0 == a) {
        let Some(&at) = heard_at.get(txid) else { continue };
        let Some(req) = tally.txid_request.get(txid) else { continue };
        if let Some(start) = tally.started.get(req) {
            latencies.push(at.saturating_sub(*start));
        }
        last = last.max(at);
    }
    let delivered = latencies.len() as u64;
    let failures = count - delivered;
    check_failures(mode, payload_kib, failures, count)?;
    let first = tally.started.iter().filter(|(k, _)| k.0 == a).map(|(_, t)| *t).min().unwrap_or_default();
    let mut row = MetricsRow::new(mode, payload_kib, delivered, failures, last.saturating_sub(first), &latencies);
    row.wall_time_s = wall.elapsed().as_secs_f64();
    log::info!("notify {mode} {payload_kib} KiB: {:.3} s/tx", row.s_per_tx);
    Ok(row)
}

pub fn run_notify_bench(config: &BenchmarkConfig) -> Result<Vec<MetricsRow>, BenchError> {
    config.validate()?;
    if config.vehicles < 2 || config.peers < 2 {
        return Err(BenchError::InvalidConfig("the notify bench needs two vehicles at two peers".into()));
    }
    let mut rows = Vec::new();
    for &mode in &config.modes {
        for &size in &config.payload_sizes {
            rows.push(run_notify_cell(config, mode, size)?);
        }
    }
    Ok(rows)
}
