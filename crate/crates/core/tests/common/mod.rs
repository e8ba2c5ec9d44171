//! Harnesses and independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use bytes::Bytes;
use edgechain::codec;
use edgechain::contracts::{
    self, ContractCall, GeoPoint, IncidentKind, IncidentReport, Invocation, QueryTarget, VehicleRecord, ZoneId,
};
use edgechain::deployment::Deployment;
use edgechain::fleet::{ContractMix, RequestPlan, RoadGraph, SubmitMode, Workload};
use edgechain::ledger::{validate_chain, Block, Hash, StateEntry, StateView, TxValidity, Version};
use edgechain::message::{Event, Message};
use edgechain::netsim::{NodeAddress, SimTime, Simulation};
use edgechain::ordering::OrdererNode;
use edgechain::peer::{EndorsementPolicy, PeerNode, PeerState};
use edgechain::system::{NetworkConfig, System, VehicleSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- raft

#[derive(Debug, Default, Clone, Copy)]
pub struct SafetyStats {
    pub faults: usize,
    pub leaders: usize,
    pub committed_entries: u64,
    pub blocks: u64,
}

struct SafetyWatch {
    /// term -> the one orderer ever seen leading it.
    leaders: BTreeMap<u64, u32>,
    /// index -> (entry term, term of the first node seen to have it
    /// committed). The latter bounds the term it was committed in.
    committed: BTreeMap<u64, (u64, u64)>,
    /// Per orderer, commit index already scanned.
    cursor: HashMap<NodeAddress, u64>,
}

impl SafetyWatch {
    /// Cheap checks every step; `full` adds the whole-log sweeps.
    fn observe(
        &mut self,
        sim: &Simulation<Message, Event>,
        orderers: &[NodeAddress],
        full: bool,
    ) -> Result<(), String> {
        for &o in orderers {
            let raft = sim.node::<OrdererNode>(o).expect("orderer").raft();
            let log = raft.log();
            if raft.commit_index() > log.len() as u64 {
                return Err(format!("{o}: commit index {} beyond log of {}", raft.commit_index(), log.len()));
            }
            if full && log.windows(2).any(|w| w[0].term > w[1].term) {
                return Err(format!("{o}: log terms decrease"));
            }
            let cursor = self.cursor.entry(o).or_insert(0);
            *cursor = (*cursor).min(raft.commit_index());
            for i in *cursor + 1..=raft.commit_index() {
                let t = raft.term_at(i);
                let seen = self.committed.entry(i).or_insert((t, raft.term()));
                if seen.0 != t {
                    return Err(format!("index {i} committed with terms {} and {t}", seen.0));
                }
            }
            *cursor = raft.commit_index();
            if sim.is_crashed(o) || !raft.is_leader() {
                continue;
            }
            let term = raft.term();
            let new_leader = match self.leaders.insert(term, raft.id()) {
                Some(prev) if prev != raft.id() => {
                    return Err(format!("election safety: term {term} led by orderer {prev} and {}", raft.id()));
                }
                Some(_) => false,
                None => true,
            };
            if new_leader || full {
                // Leader completeness: everything committed in an earlier
                // term sits in this leader's log at the same position.
                for (&i, &(t, committed_by)) in &self.committed {
                    if committed_by < term && (i > raft.last_index() || raft.term_at(i) != t) {
                        return Err(format!("leader completeness: {o} leads term {term} without committed entry {i}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn log_matching(sim: &Simulation<Message, Event>, orderers: &[NodeAddress]) -> Result<(), String> {
    for (x, &a) in orderers.iter().enumerate() {
        for &b in &orderers[x + 1..] {
            let la = sim.node::<OrdererNode>(a).unwrap().raft().log();
            let lb = sim.node::<OrdererNode>(b).unwrap().raft().log();
            let n = la.len().min(lb.len());
            if let Some(last) = (0..n).rev().find(|&i| la[i].term == lb[i].term) {
                if la[..=last] != lb[..=last] {
                    return Err(format!(
                        "log matching: {a} and {b} agree on entry {} term but differ before",
                        last + 1
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Peers' chains must be prefixes of one another.
fn peer_agreement(sim: &Simulation<Message, Event>, peers: &[NodeAddress]) -> Result<u64, String> {
    let chains: Vec<_> = peers.iter().map(|p| sim.node::<PeerNode>(*p).unwrap().state().chain().blocks()).collect();
    for (p, c) in peers.iter().zip(&chains) {
        validate_chain(c).map_err(|v| format!("{p}: invalid chain {v:?}"))?;
    }
    let longest = chains.iter().max_by_key(|c| c.len()).unwrap();
    for (p, c) in peers.iter().zip(&chains) {
        for (i, b) in c.iter().enumerate() {
            if b.hash() != longest[i].hash() || b.validity != longest[i].validity {
                return Err(format!("total order: {p} disagrees at block {i}"));
            }
        }
    }
    Ok(longest.len() as u64)
}

/// One seeded run of the full system with random orderer and peer crashes
/// and partitions, checked for election safety, log matching, leader
/// completeness and peer total-order agreement throughout.
pub fn raft_safety_run(seed: u64) -> Result<SafetyStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vehicles = (0..3)
        .map(|i| {
            let mode = if i % 2 == 0 { SubmitMode::Single } else { SubmitMode::Multiple };
            VehicleSpec::fleet_member(i, 3, Workload::Plan(RequestPlan::new(1, 4, mode, ContractMix::UPDATES)))
        })
        .collect();
    let system = System::new(NetworkConfig { seed, ..NetworkConfig::default() }, vehicles);
    let mut sim = system.simulation().map_err(|e| e.to_string())?;
    let orderers = system.orderer_addresses();
    let peers = system.peer_addresses();
    let mut everyone = orderers.clone();
    everyone.extend(&peers);
    everyone.extend(system.vehicle_addresses());

    let horizon_ms = 5000;
    let faults = rng.gen_range(2..=10);
    for _ in 0..faults {
        let at = SimTime::from_millis(rng.gen_range(0..horizon_ms));
        let until = at.after(Duration::from_millis(rng.gen_range(50..2500)));
        match rng.gen_range(0..3) {
            0 => {
                let o = *orderers.choose(&mut rng).unwrap();
                sim.crash_at(at, o).unwrap();
                sim.restart_at(until, o).unwrap();
            }
            1 => {
                let p = *peers.choose(&mut rng).unwrap();
                sim.crash_at(at, p).unwrap();
                sim.restart_at(until, p).unwrap();
            }
            _ => {
                let mut nodes = everyone.clone();
                nodes.shuffle(&mut rng);
                let k = rng.gen_range(1..nodes.len());
                let b = nodes.split_off(k);
                sim.partition_at(at, nodes, b);
                sim.heal_all_at(until);
            }
        }
    }

    let mut watch = SafetyWatch { leaders: BTreeMap::new(), committed: BTreeMap::new(), cursor: HashMap::new() };
    let end = SimTime::from_millis(horizon_ms + 4000);
    let mut steps = 0u64;
    while sim.now() < end && sim.step() {
        steps += 1;
        let full = steps.is_multiple_of(64);
        watch.observe(&sim, &orderers, full)?;
        if full {
            log_matching(&sim, &orderers)?;
        }
    }
    watch.observe(&sim, &orderers, true)?;
    log_matching(&sim, &orderers)?;
    let blocks = peer_agreement(&sim, &peers)?;
    Ok(SafetyStats { faults, leaders: watch.leaders.len(), committed_entries: watch.committed.len() as u64, blocks })
}

// ---------------------------------------------------------------- mvcc

/// Plain map standing in for the world state during serial re-execution.
#[derive(Debug, Default)]
pub struct OracleState(pub BTreeMap<String, StateEntry>);

impl StateView for OracleState {
    fn get(&self, key: &str) -> Option<&StateEntry> {
        self.0.get(key)
    }

    fn scan_prefix<'a>(&'a self, prefix: &str) -> Vec<(&'a str, &'a StateEntry)> {
        self.0.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, e)| (k.as_str(), e)).collect()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MvccStats {
    pub transactions: usize,
    pub valid: usize,
    pub conflicts: usize,
}

fn vehicle_update(d: &Deployment, v: usize, lat: f64) -> ContractCall {
    let p = d.vehicle(v).pseudonym();
    let record = VehicleRecord {
        pseudonym: p,
        owners: vec![p],
        inspection_history: vec![],
        gps: GeoPoint::new(lat, 139.7),
        connected_edge: "green".into(),
        insurance_ref: format!("policy-{v}"),
    };
    ContractCall::update_vehicle(&record, Bytes::from_static(b"env"))
}

fn incident(d: &Deployment, v: usize, zone: &ZoneId, at: u64) -> ContractCall {
    let image = Bytes::from(vec![v as u8; 64]);
    let report = IncidentReport {
        reporter: d.vehicle(v).pseudonym(),
        gps: GeoPoint::new(35.68, 139.76),
        kind: IncidentKind::Congestion,
        image_hash: Hash::digest(&image),
        zone: zone.clone(),
        reported_at: at,
    };
    ContractCall::report_incident(&report, image)
}

/// Random conflicting workload (at most 50 transactions, at most 9
/// contended keys: one record per vehicle and one head per zone),
/// endorsed against stale snapshots, committed by a real peer, then
/// checked against brute-force serial re-execution.
pub fn mvcc_oracle_run(seed: u64) -> Result<MvccStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_vehicles = rng.gen_range(1..=5);
    let zones: Vec<ZoneId> = (0..rng.gen_range(1..=4)).map(|z| ZoneId::new(format!("z{z}"))).collect();
    let d = Deployment::generate(seed, n_vehicles, 1, 1, EndorsementPolicy::default());
    let mut peer = d.peer_state(0);
    let mut snapshots: Vec<PeerState> = vec![peer.clone()];
    let total = rng.gen_range(1..=50);
    let mut nonce = 0u64;
    let mut made = 0;
    while made < total {
        let size = rng.gen_range(1..=8).min(total - made);
        let mut txs = Vec::new();
        for _ in 0..size {
            let lag = rng.gen_range(0..3.min(snapshots.len()));
            let snap = &snapshots[snapshots.len() - 1 - lag];
            let v = rng.gen_range(0..n_vehicles);
            let call = match rng.gen_range(0..3) {
                0 => vehicle_update(&d, v, rng.gen_range(-80.0..80.0)),
                1 => incident(&d, v, zones.choose(&mut rng).unwrap(), nonce),
                _ => {
                    let target = d.vehicle(rng.gen_range(0..n_vehicles)).pseudonym();
                    ContractCall::query(&QueryTarget::Vehicle(target))
                }
            };
            nonce += 1;
            let sp = d.propose(v, call, nonce, nonce);
            txs.push(d.endorse(sp, &[snap]).map_err(|e| format!("endorse: {e}"))?);
        }
        made += size;
        let mut block = Block::next_after(peer.chain().last_header(), txs);
        block.validity = peer.validate_block(&block).map_err(|e| e.to_string())?;
        peer.commit_block(block).map_err(|e| e.to_string())?;
        snapshots.push(peer.clone());
    }

    let mut oracle = OracleState::default();
    let mut stats = MvccStats::default();
    for block in peer.chain().blocks() {
        for (i, (tx, flag)) in block.transactions.iter().zip(&block.validity).enumerate() {
            stats.transactions += 1;
            let fresh = tx.rw_set.reads.iter().all(|(k, v)| oracle.version_of(k) == *v);
            let expect = if fresh { TxValidity::Valid } else { TxValidity::ConflictInvalid };
            if *flag != expect {
                return Err(format!("block {} tx {i}: flagged {flag:?}, oracle says {expect:?}", block.number()));
            }
            if !fresh {
                stats.conflicts += 1;
                continue;
            }
            stats.valid += 1;
            let serial = contracts::execute(&tx.call, Invocation { caller: tx.creator, txid: tx.id }, &oracle)
                .map_err(|e| format!("serial re-execution failed: {e}"))?;
            if serial != tx.rw_set {
                return Err(format!("block {} tx {i}: serial execution differs from endorsed rw set", block.number()));
            }
            let version = Version::new(block.number(), i as u64);
            for (k, value) in serial.writes {
                oracle.0.insert(k, StateEntry { value, version });
            }
        }
    }
    let world: BTreeMap<&String, &StateEntry> = peer.world().iter().collect();
    let expected: BTreeMap<&String, &StateEntry> = oracle.0.iter().collect();
    if world != expected {
        return Err(format!("final state differs: peer {} keys, oracle {}", world.len(), expected.len()));
    }
    Ok(stats)
}

// ---------------------------------------------------------------- tamper

/// A committed multi-block chain from a small virtual run.
pub fn committed_chain(seed: u64) -> Vec<Block> {
    let vehicles = (0..3)
        .map(|i| {
            let mix = ContractMix { update: 0.5, report: 0.5 };
            VehicleSpec::fleet_member(i, 3, Workload::Plan(RequestPlan::new(2, 8, SubmitMode::Multiple, mix)))
        })
        .collect();
    let system = System::new(NetworkConfig { seed, ..NetworkConfig::default() }, vehicles);
    let mut sim = system.simulation().unwrap();
    let done = system.vehicle_addresses();
    let _ = sim.run_until(
        |s| done.iter().all(|v| s.node::<edgechain::fleet::VehicleNode>(*v).unwrap().is_done()),
        Duration::from_secs(60),
    );
    sim.run_for(Duration::from_secs(1));
    sim.node::<PeerNode>(NodeAddress::peer(0)).unwrap().state().chain().blocks().to_vec()
}

/// Byte ranges of every transaction inside an exported ledger, as
/// `(block index, start, end)`. Derived from the layout of the canonical
/// encoding: an 8-byte frame length, the 72-byte header, an 8-byte count,
/// then the transactions back to back.
pub fn transaction_spans(blocks: &[Block], export: &[u8]) -> Vec<(usize, usize, usize)> {
    let mut spans = Vec::new();
    let mut frame = 0;
    for (index, block) in blocks.iter().enumerate() {
        let len = codec::encoded_len(block);
        let mut at = frame + 8 + 72 + 8;
        for tx in &block.transactions {
            let enc = codec::encode(tx);
            assert_eq!(&export[at..at + enc.len()], &enc[..], "layout assumption broken in block {index}");
            spans.push((index, at, at + enc.len()));
            at += enc.len();
        }
        frame += 8 + len;
    }
    assert_eq!(frame, export.len());
    spans
}

// ---------------------------------------------------------------- routes

/// Minimum cost over every simple path, and the lexicographically
/// smallest path achieving it. Paths exclude `from`, as routes do.
pub fn exhaustive_best_route(graph: &RoadGraph, from: usize, to: usize) -> Option<(u64, Vec<usize>)> {
    fn dfs(
        g: &RoadGraph,
        at: usize,
        to: usize,
        cost: u64,
        visited: &mut Vec<bool>,
        path: &mut Vec<usize>,
        best: &mut Option<(u64, Vec<usize>)>,
    ) {
        if at == to {
            let better = match best {
                None => true,
                Some((c, p)) => cost < *c || (cost == *c && path < p),
            };
            if better {
                *best = Some((cost, path.clone()));
            }
            return;
        }
        for &(n, _) in g.neighbours(at) {
            if visited[n] {
                continue;
            }
            visited[n] = true;
            path.push(n);
            dfs(g, n, to, cost + g.weight(at, n).unwrap(), visited, path, best);
            path.pop();
            visited[n] = false;
        }
    }
    let mut visited = vec![false; graph.len()];
    visited[from] = true;
    let mut best = None;
    dfs(graph, from, to, 0, &mut visited, &mut Vec::new(), &mut best);
    best
}

/// Tally of events per node, for quick trace comparisons.
pub fn event_counts(events: &[edgechain::netsim::Timed<Event>]) -> HashMap<NodeAddress, usize> {
    let mut out = HashMap::new();
    for e in events {
        *out.entry(e.node).or_insert(0) += 1;
    }
    out
}
