//! JSON scenario files: topology, link model and fault schedule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CostModel, LinkModel, NodeAddress, SimTime, Simulation, WireMessage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashEvent {
    pub at_ms: u64,
    pub node: NodeAddress,
    #[serde(default)]
    pub restart_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionEvent {
    pub at_ms: u64,
    #[serde(default)]
    pub heal_at_ms: Option<u64>,
    pub a: Vec<NodeAddress>,
    pub b: Vec<NodeAddress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub orderers: u32,
    pub peers: u32,
    pub vehicles: u32,
    pub link: LinkModel,
    pub cost: CostModel,
    pub crashes: Vec<CrashEvent>,
    pub partitions: Vec<PartitionEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            orderers: 3,
            peers: 3,
            vehicles: 3,
            link: LinkModel::default(),
            cost: CostModel::default(),
            crashes: Vec::new(),
            partitions: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing scenario: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.link.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if self.orderers == 0 || self.peers == 0 {
            return Err(ScenarioError::Invalid("need at least one orderer and one peer".into()));
        }
        for c in &self.crashes {
            if c.restart_at_ms.is_some_and(|r| r < c.at_ms) {
                return Err(ScenarioError::Invalid(format!("{} restarts before crashing", c.node)));
            }
        }
        Ok(())
    }

    /// Queues the crash and partition schedule on a virtual-time run.
    pub fn schedule_faults<M: WireMessage, E: Send + 'static>(
        &self,
        sim: &mut Simulation<M, E>,
    ) -> Result<(), super::SimError> {
        for c in &self.crashes {
            sim.crash_at(SimTime::from_millis(c.at_ms), c.node)?;
            if let Some(r) = c.restart_at_ms {
                sim.restart_at(SimTime::from_millis(r), c.node)?;
            }
        }
        for p in &self.partitions {
            sim.partition_at(SimTime::from_millis(p.at_ms), p.a.clone(), p.b.clone());
            if let Some(h) = p.heal_at_ms {
                sim.heal_all_at(SimTime::from_millis(h));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full() {
        let cfg = ScenarioConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let cfg = ScenarioConfig::from_json(
            r#"{"seed": 9, "peers": 4,
                "link": {"base_latency_ms": 1.0, "jitter_ms": 0.5, "loss_rate": 0.01},
                "crashes": [{"at_ms": 100, "node": {"kind": "peer", "index": 2}, "restart_at_ms": 400}],
                "partitions": [{"at_ms": 10, "a": [{"kind": "orderer", "index": 0}],
                                "b": [{"kind": "orderer", "index": 1}]}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.crashes[0].node, NodeAddress::peer(2));
        assert_eq!(cfg.link.jitter_ms, 0.5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_json(r#"{"link": {"loss_rate": 1.5}}"#).is_err());
        assert!(ScenarioConfig::from_json(r#"{"peers": 0}"#).is_err());
        assert!(ScenarioConfig::from_json(
            r#"{"crashes": [{"at_ms": 10, "node": {"kind": "peer", "index": 0}, "restart_at_ms": 5}]}"#
        )
        .is_err());
    }
}
