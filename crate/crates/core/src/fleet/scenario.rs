use std::time::Duration;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{RoadGraph, RouteState};
use super::vehicle::{ScriptedAction, Workload};
use crate::contracts::{ContractCall, IncidentKind, IncidentReport, QueryTarget};
use crate::deployment::{zone_for_peer, COMPANY_ZONES};
use crate::ledger::{Hash, TransactionId};
use crate::message::{Event, Message};
use crate::netsim::{LinkModel, NodeAddress, SimTime, Timed};
use crate::peer::{PeerNode, PeerSnapshot};
use crate::system::{NetworkConfig, System, VehicleSpec};

const RED: u32 = 0;
const GREEN: u32 = 1;
const BLUE: u32 = 2;

/// Scripted two-vehicle run: a reporter in one zone, a receiver with a
/// planned route in another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Edge the reporter witnesses the accident on.
    pub incident_edge: (usize, usize),
    pub report_at_ms: u64,
    pub image_kib: usize,
    pub receiver_from: usize,
    pub receiver_to: usize,
    /// When the receiver asks its peer for the zone's incidents.
    pub query_at_ms: u64,
    /// Peer taken down shortly after registration, never restarted.
    pub crash_peer: Option<u32>,
    pub link: LinkModel,
    pub deadline_ms: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            seed: 7,
            width: 5,
            height: 5,
            incident_edge: (2, 3),
            report_at_ms: 600,
            image_kib: 16,
            receiver_from: 4,
            receiver_to: 20,
            query_at_ms: 4000,
            crash_peer: None,
            link: LinkModel::default(),
            deadline_ms: 10_000,
        }
    }
}

impl GuidanceConfig {
    /// The accident happens on a road the receiver does not plan to use.
    pub fn off_route() -> Self {
        GuidanceConfig { incident_edge: (18, 23), ..Self::default() }
    }

    /// The receiver's home peer is down for the whole run.
    pub fn home_peer_crashed() -> Self {
        GuidanceConfig { crash_peer: Some(BLUE), ..Self::default() }
    }

    pub fn graph(&self) -> RoadGraph {
        let zones: Vec<_> = COMPANY_ZONES.iter().map(|z| crate::contracts::ZoneId::new(*z)).collect();
        RoadGraph::grid(self.width, self.height, &zones)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scenario step failed: {step}")]
pub struct ScenarioAssertionFailed {
    pub step: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GuidanceReport {
    pub incident_txid: TransactionId,
    pub incident_block: u64,
    pub reroutes: usize,
    pub old_route: Vec<usize>,
    pub new_route: Vec<usize>,
    pub incident_edge: (usize, usize),
    pub destination: usize,
    /// Graph as the receiver saw it at the end, penalties included.
    pub receiver_graph: RoadGraph,
    /// Live peers at the end of the run.
    pub peers: Vec<PeerSnapshot>,
    pub events: Vec<Timed<Event>>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    at_us: u64,
    node: String,
    #[serde(flatten)]
    event: &'a Event,
}

/// One JSON object per line, in trace order.
pub fn event_log_jsonl(events: &[Timed<Event>]) -> String {
    let mut out = String::new();
    for e in events {
        let line = LogLine { at_us: e.at.0, node: e.node.to_string(), event: &e.event };
        out.push_str(&serde_json::to_string(&line).expect("events serialize"));
        out.push('\n');
    }
    out
}

fn check(ok: bool, step: &str) -> Result<(), ScenarioAssertionFailed> {
    if ok {
        Ok(())
    } else {
        Err(ScenarioAssertionFailed { step: step.to_string() })
    }
}

/// Vehicle A (red company, driving in the green zone) photographs an
/// accident and reports it to the green peer. Once ordered and committed
/// everywhere, the blue peer tells vehicle B (green company, blue zone),
/// which replans around the accident and later reads the report back.
pub fn run_scenario_adaptive_guidance(cfg: &GuidanceConfig) -> Result<GuidanceReport, ScenarioAssertionFailed> {
    let graph = cfg.graph();
    let (a, b) = cfg.incident_edge;
    check(graph.has_edge(a, b), "incident edge exists")?;
    let route = RouteState::new(graph.clone(), cfg.receiver_from, cfg.receiver_to)
        .map_err(|e| ScenarioAssertionFailed { step: format!("receiver route: {e}") })?;
    let on_route = route.remaining_edges().any(|(x, y)| (x.min(y), x.max(y)) == (a.min(b), a.max(b)));

    let network = NetworkConfig { seed: cfg.seed, link: cfg.link, ..NetworkConfig::default() };
    let green_zone = zone_for_peer(GREEN);
    let reporter = VehicleSpec::new(COMPANY_ZONES[RED as usize], GREEN, Workload::Idle);
    let mut receiver = VehicleSpec::new(
        COMPANY_ZONES[GREEN as usize],
        BLUE,
        Workload::Script(vec![(cfg.query_at_ms, ScriptedAction::Query(QueryTarget::Zone(green_zone.clone())))]),
    );
    receiver.route = Some(route.clone());
    let mut system = System::new(network, vec![reporter, receiver]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut image = vec![0u8; cfg.image_kib * 1024];
    rng.fill_bytes(&mut image);
    let report = IncidentReport {
        reporter: system.deployment.vehicle(0).pseudonym(),
        gps: graph.edge_midpoint(a, b),
        kind: IncidentKind::Accident,
        image_hash: Hash::digest(&image),
        zone: green_zone.clone(),
        reported_at: cfg.report_at_ms,
    };
    let call = ContractCall::report_incident(&report, Bytes::from(image));
    system.vehicles[0].workload = Workload::Script(vec![(cfg.report_at_ms, ScriptedAction::Call(call))]);

    let mut sim = system.simulation().expect("valid link model");
    let (va, vb) = (NodeAddress::vehicle(0), NodeAddress::vehicle(1));
    if let Some(p) = cfg.crash_peer {
        sim.crash_at(SimTime::from_millis(cfg.report_at_ms / 2), NodeAddress::peer(p)).expect("known peer");
    }
    let done = |sim: &crate::netsim::Simulation<Message, Event>| {
        let ev = sim.events();
        ev.iter().any(|e| e.node == vb && matches!(e.event, Event::QueryAnswered { .. }))
            && ev.iter().any(|e| e.node == vb && matches!(e.event, Event::Notified { .. }))
    };
    let _ = sim.run_until(done, Duration::from_millis(cfg.deadline_ms));
    // Let trailing deliveries settle so every live peer has committed.
    sim.run_for(Duration::from_millis(500));
    let events = sim.events().to_vec();

    let (txid, block) = events
        .iter()
        .find_map(|e| match e.event {
            Event::RequestCompleted { txid, block, .. } if e.node == va => Some((txid, block)),
            _ => None,
        })
        .ok_or(ScenarioAssertionFailed { step: "reporter's incident committed".into() })?;

    for p in system.peer_addresses() {
        if Some(p.index) == cfg.crash_peer {
            continue;
        }
        let peer = sim.node::<PeerNode>(p).expect("peer node");
        check(peer.state().tx_status(&txid).is_some_and(|(_, v)| v.is_valid()), &format!("incident committed at {p}"))?;
    }

    let notified: Vec<_> = events
        .iter()
        .filter(|e| e.node == vb)
        .filter_map(|e| match &e.event {
            Event::Notified { txid: t, peer, .. } if *t == txid => Some(*peer),
            _ => None,
        })
        .collect();
    check(notified == [BLUE], "receiver notified once by its home peer")?;

    let reroutes: Vec<_> = events
        .iter()
        .filter(|e| e.node == vb)
        .filter_map(|e| match &e.event {
            Event::Rerouted { old_route, new_route, edge, .. } => Some((old_route.clone(), new_route.clone(), *edge)),
            _ => None,
        })
        .collect();
    let vehicle = sim.node::<super::VehicleNode>(vb).expect("receiver node");
    let final_route = vehicle.route().expect("receiver has a route").clone();
    let (old_route, new_route) = if on_route {
        check(reroutes.len() == 1, "receiver rerouted exactly once")?;
        let (old, new, edge) = reroutes[0].clone();
        check(edge == (a.min(b), a.max(b)), "reroute maps the incident to its edge")?;
        check(new.last() == Some(&cfg.receiver_to), "destination unchanged")?;
        let mut at = cfg.receiver_from;
        for &n in &new {
            check(!final_route.graph.is_penalized(at, n), "new route avoids the incident edge")?;
            at = n;
        }
        (old, new)
    } else {
        check(reroutes.is_empty(), "off-route incident causes no reroute")?;
        (route.route.clone(), route.route.clone())
    };

    let answered = events.iter().any(|e| e.node == vb && matches!(e.event, Event::QueryAnswered { empty: false, .. }));
    check(answered, "receiver reads the other company's report")?;

    let peers = system
        .peer_addresses()
        .into_iter()
        .filter(|p| !sim.is_crashed(*p))
        .map(|p| sim.node::<PeerNode>(p).expect("peer node").state().snapshot())
        .collect();
    Ok(GuidanceReport {
        incident_txid: txid,
        incident_block: block,
        reroutes: reroutes.len(),
        old_route,
        new_route,
        incident_edge: (a.min(b), a.max(b)),
        destination: cfg.receiver_to,
        receiver_graph: final_route.graph,
        peers,
        events,
    })
}
