//! Assembles a full network (orderers, peers, vehicles) on either runtime.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contracts::ZoneId;
use crate::deployment::{zone_for_peer, Deployment, COMPANY_ZONES};
use crate::fleet::{RouteState, VehicleConfig, VehicleNode, VehicleTimeouts, Workload};
use crate::message::{Event, Message};
use crate::netsim::{CostModel, LinkModel, NodeAddress, Process, RealtimeNetwork, Runtime, SimError, Simulation};
use crate::ordering::{BlockCutPolicy, OrdererConfig, OrdererNode, RaftConfig};
use crate::peer::{EndorsementPolicy, PeerConfig, PeerNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Virtual,
    Real,
}

impl FromStr for Clock {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(Clock::Virtual),
            "real" => Ok(Clock::Real),
            other => Err(format!("unknown clock {other:?} (expected virtual or real)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub seed: u64,
    pub peers: u32,
    pub orderers: u32,
    pub link: LinkModel,
    pub cost: CostModel,
    pub cut: BlockCutPolicy,
    pub raft: RaftConfig,
    pub policy: EndorsementPolicy,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 1,
            peers: 3,
            orderers: 3,
            link: LinkModel::default(),
            cost: CostModel::default(),
            cut: BlockCutPolicy::default(),
            raft: RaftConfig::default(),
            policy: EndorsementPolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VehicleSpec {
    pub company: String,
    pub zone: ZoneId,
    pub home_peer: u32,
    pub workload: Workload,
    pub route: Option<RouteState>,
    pub window: usize,
    pub timeouts: VehicleTimeouts,
}

impl VehicleSpec {
    pub fn new(company: impl Into<String>, home_peer: u32, workload: Workload) -> Self {
        VehicleSpec {
            company: company.into(),
            zone: zone_for_peer(home_peer),
            home_peer,
            workload,
            route: None,
            window: 1,
            timeouts: VehicleTimeouts::default(),
        }
    }

    /// Vehicle `i` of a fleet spread round-robin over companies and peers.
    pub fn fleet_member(i: usize, peers: u32, workload: Workload) -> Self {
        let company = COMPANY_ZONES[i % COMPANY_ZONES.len()];
        VehicleSpec::new(company, i as u32 % peers, workload)
    }
}

/// A configured network ready to be launched any number of times; every
/// launch starts from empty ledgers.
#[derive(Debug, Clone)]
pub struct System {
    pub network: NetworkConfig,
    pub deployment: Deployment,
    pub vehicles: Vec<VehicleSpec>,
}

impl System {
    pub fn new(network: NetworkConfig, vehicles: Vec<VehicleSpec>) -> Self {
        let deployment = Deployment::generate(
            network.seed,
            vehicles.len(),
            network.peers as usize,
            network.orderers as usize,
            network.policy,
        );
        System { network, deployment, vehicles }
    }

    pub fn orderer_addresses(&self) -> Vec<NodeAddress> {
        (0..self.network.orderers).map(NodeAddress::orderer).collect()
    }

    pub fn peer_addresses(&self) -> Vec<NodeAddress> {
        (0..self.network.peers).map(NodeAddress::peer).collect()
    }

    pub fn vehicle_addresses(&self) -> Vec<NodeAddress> {
        (0..self.vehicles.len() as u32).map(NodeAddress::vehicle).collect()
    }

    pub fn processes(&self) -> Vec<(NodeAddress, Box<dyn Process<Message, Event>>)> {
        let n = &self.network;
        let mut out: Vec<(NodeAddress, Box<dyn Process<Message, Event>>)> = Vec::new();
        for i in 0..n.orderers {
            let mut cfg = OrdererConfig::new(i, n.orderers, n.peers);
            cfg.raft = n.raft;
            cfg.cut = n.cut;
            cfg.cost = n.cost;
            out.push((NodeAddress::orderer(i), Box::new(OrdererNode::new(cfg))));
        }
        for i in 0..n.peers {
            let state = self.deployment.peer_state(i as usize);
            out.push((NodeAddress::peer(i), Box::new(PeerNode::new(state, PeerConfig { cost: n.cost }))));
        }
        for (i, spec) in self.vehicles.iter().enumerate() {
            let mut cfg = VehicleConfig::new(
                i as u32,
                spec.company.clone(),
                spec.zone.clone(),
                spec.home_peer,
                n.peers,
                n.orderers,
            );
            cfg.required_endorsements = n.policy.required;
            cfg.window = spec.window;
            cfg.timeouts = spec.timeouts;
            let mut node = VehicleNode::new(self.deployment.vehicle(i).clone(), cfg, spec.workload.clone());
            if let Some(r) = &spec.route {
                node = node.with_route(r.clone());
            }
            out.push((NodeAddress::vehicle(i as u32), Box::new(node)));
        }
        out
    }

    pub fn simulation(&self) -> Result<Simulation<Message, Event>, SimError> {
        let mut sim = Simulation::new(self.network.seed, self.network.link)?;
        for (addr, p) in self.processes() {
            sim.add_node(addr, p);
        }
        Ok(sim)
    }

    pub fn launch(&self, clock: Clock) -> Result<Box<dyn Runtime<Message, Event>>, SimError> {
        Ok(match clock {
            Clock::Virtual => Box::new(self.simulation()?),
            Clock::Real => Box::new(RealtimeNetwork::start(self.network.seed, self.network.link, self.processes())?),
        })
    }
}
