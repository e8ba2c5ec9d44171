use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{check_failures, plan, settle, BenchError, BenchmarkConfig, MetricsRow, Tally};
use crate::fleet::{ContractMix, SubmitMode, Workload};
use crate::ledger::{validate_chain, Hash, TransactionId};
use crate::message::{Event, Message};
use crate::netsim::{NodeAddress, Runtime, SimTime};
use crate::peer::PeerNode;
use crate::system::{System, VehicleSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrdererTarget {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultPlan {
    /// Orderers to crash, resolved against the leader at crash time.
    pub orderers: Vec<OrdererTarget>,
    pub peer: Option<u32>,
    /// Crash once this fraction of all requests has resolved.
    pub at_fraction: f64,
    /// Bring the crashed nodes back this long after the crash.
    pub restart_after_ms: Option<u64>,
    pub mode: SubmitMode,
    pub payload_kib: u32,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            orderers: vec![OrdererTarget::Follower],
            peer: Some(2),
            at_fraction: 0.5,
            restart_after_ms: None,
            mode: SubmitMode::Single,
            payload_kib: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FaultReport {
    pub row: MetricsRow,
    pub crashed: Vec<NodeAddress>,
    pub restarted: bool,
    pub crash_at_s: f64,
    pub pre_tx_per_s: f64,
    pub post_tx_per_s: f64,
    /// Post-crash over pre-crash throughput.
    pub dip_ratio: f64,
    /// Longest stretch without a commit after the crash.
    pub longest_gap_s: f64,
    /// Completed transactions missing from some surviving peer.
    pub lost: usize,
    /// Envelopes ordered more than once and flagged on commit.
    pub duplicates_flagged: usize,
    pub heights: BTreeMap<String, u64>,
    pub state_hashes: BTreeMap<String, Hash>,
}

impl FaultReport {
    pub fn converged(&self) -> bool {
        self.state_hashes.values().collect::<BTreeSet<_>>().len() == 1
            && self.heights.values().collect::<BTreeSet<_>>().len() == 1
    }
}

fn pick_orderers(targets: &[OrdererTarget], leader: NodeAddress, orderers: u32) -> Vec<NodeAddress> {
    let mut out: Vec<NodeAddress> = Vec::new();
    for t in targets {
        let pick = match t {
            OrdererTarget::Leader => Some(leader),
            OrdererTarget::Follower => {
                (0..orderers).map(NodeAddress::orderer).find(|o| *o != leader && !out.contains(o))
            }
        };
        if let Some(p) = pick.filter(|p| !out.contains(p)) {
            out.push(p);
        }
    }
    out
}

fn until_done(tally: &mut Tally, rt: &mut dyn Runtime<Message, Event>, total: u64, timeout: Duration) {
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            tally.resolved() >= total
        },
        timeout,
    );
}

/// Crashes orderers and a peer mid-run and checks that nothing committed
/// is lost and the surviving peers agree.
pub fn run_fault_bench(config: &BenchmarkConfig, fault: &FaultPlan) -> Result<FaultReport, BenchError> {
    config.validate()?;
    if config.peers < 3 || config.orderers < 3 {
        return Err(BenchError::InvalidConfig("the fault bench needs 3 peers and 3 orderers".into()));
    }
    if !(0.0..1.0).contains(&fault.at_fraction) {
        return Err(BenchError::InvalidConfig("crash point must be a fraction in [0, 1)".into()));
    }
    let wall = Instant::now();
    let count = config.requests_per_vehicle;
    let total = count * config.vehicles as u64;
    let vehicles: Vec<_> = (0..config.vehicles)
        .map(|i| {
            let p = plan(fault.mode, fault.payload_kib, count, ContractMix::UPDATES);
            let mut v = VehicleSpec::fleet_member(i, config.peers, Workload::Plan(p));
            v.window = config.window;
            v
        })
        .collect();
    let system = System::new(config.network(), vehicles);
    let mut rt = system.launch(config.clock)?;
    let mut tally = Tally::default();

    let threshold = (fault.at_fraction * total as f64).ceil() as u64;
    let _ = rt.run_until_events(
        &mut |ev| {
            tally.feed(ev);
            tally.resolved() >= threshold && tally.current_leader().is_some()
        },
        config.cell_timeout(),
    );
    let leader = tally
        .current_leader()
        .ok_or_else(|| BenchError::FaultBenchFailed("no orderer leader was ever elected".into()))?;
    let crash_at = rt.now();
    let mut crashed = pick_orderers(&fault.orderers, leader, config.orderers);
    if let Some(p) = fault.peer {
        crashed.push(NodeAddress::peer(p));
    }
    for n in &crashed {
        rt.crash(*n)?;
    }
    log::info!("fault bench: crashed {crashed:?} at {crash_at}");

    let restarted = match fault.restart_after_ms {
        Some(ms) => {
            until_done(&mut tally, rt.as_mut(), total, Duration::from_millis(ms));
            for n in &crashed {
                rt.restart(*n)?;
            }
            true
        }
        None => false,
    };
    until_done(&mut tally, rt.as_mut(), total, config.cell_timeout());
    if tally.resolved() < total {
        return Err(BenchError::FaultBenchFailed(format!(
            "only {} of {total} requests resolved after crashing {crashed:?}",
            tally.resolved()
        )));
    }
    let live: Vec<_> = system.peer_addresses().into_iter().filter(|p| restarted || !crashed.contains(p)).collect();
    settle(rt.as_mut(), &mut tally, &live, Duration::from_secs(20));
    let finished = rt.finish();

    let failures = tally.failed.len() as u64;
    check_failures(fault.mode, fault.payload_kib, failures, total)?;
    let completed: HashSet<TransactionId> = tally.completed.iter().map(|c| c.2).collect();
    let mut lost = 0;
    let mut duplicates_flagged = 0;
    let mut heights = BTreeMap::new();
    let mut state_hashes = BTreeMap::new();
    for p in &live {
        let peer = finished.node::<PeerNode>(*p).expect("peer node");
        let chain = peer.state().chain().blocks();
        if let Err(v) = validate_chain(chain) {
            return Err(BenchError::FaultBenchFailed(format!("{p} holds an invalid chain: {v:?}")));
        }
        let mut ids = HashSet::new();
        let mut valid = HashSet::new();
        for b in chain {
            for (tx, flag) in b.transactions.iter().zip(&b.validity) {
                if !ids.insert(tx.id) {
                    duplicates_flagged += 1;
                }
                if flag.is_valid() {
                    valid.insert(tx.id);
                }
            }
        }
        lost += completed.iter().filter(|t| !valid.contains(t)).count();
        heights.insert(p.to_string(), peer.state().height());
        state_hashes.insert(p.to_string(), peer.state().state_hash());
    }
    if lost > 0 {
        return Err(BenchError::FaultBenchFailed(format!("{lost} committed transactions missing on surviving peers")));
    }
    if state_hashes.values().collect::<BTreeSet<_>>().len() > 1 {
        return Err(BenchError::FaultBenchFailed(format!(
            "surviving peers diverged: {state_hashes:?} at heights {heights:?}"
        )));
    }

    let mut commits: Vec<SimTime> = tally.completed.iter().map(|c| c.3).collect();
    commits.sort();
    let first = tally.first_start().unwrap_or_default();
    let last = commits.last().copied().unwrap_or(first);
    let rate = |n: usize, d: Duration| if d.is_zero() { 0.0 } else { n as f64 / d.as_secs_f64() };
    let pre = commits.iter().filter(|t| **t <= crash_at).count();
    let pre_tx_per_s = rate(pre, crash_at.saturating_sub(first));
    let post_tx_per_s = rate(commits.len() - pre, last.saturating_sub(crash_at));
    let longest_gap = std::iter::once(crash_at)
        .chain(commits.iter().copied().filter(|t| *t > crash_at))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1].saturating_sub(w[0]))
        .max()
        .unwrap_or_default();

    let mut row = MetricsRow::new(
        fault.mode,
        fault.payload_kib,
        completed.len() as u64,
        failures,
        last.saturating_sub(first),
        &tally.latencies(),
    );
    row.wall_time_s = wall.elapsed().as_secs_f64();
    Ok(FaultReport {
        row,
        crashed,
        restarted,
        crash_at_s: crash_at.as_secs_f64(),
        pre_tx_per_s,
        post_tx_per_s,
        dip_ratio: if pre_tx_per_s > 0.0 { post_tx_per_s / pre_tx_per_s } else { 0.0 },
        longest_gap_s: longest_gap.as_secs_f64(),
        lost,
        duplicates_flagged,
        heights,
        state_hashes,
    })
}
