use std::fmt;

use serde::{Deserialize, Serialize};

use crate::identity::{Millis, Pseudonym};
use crate::ledger::Hash;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZoneId(pub String);

impl ZoneId {
    pub fn new(name: impl Into<String>) -> Self {
        ZoneId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ZoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        GeoPoint { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub pseudonym: Pseudonym,
    pub owners: Vec<Pseudonym>,
    pub inspection_history: Vec<Millis>,
    pub gps: GeoPoint,
    pub connected_edge: String,
    pub insurance_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKind {
    Accident,
    Congestion,
    RoadCondition,
    Weather,
}

/// Report of a road situation. The image itself travels in the transaction
/// payload; state keeps only its digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    pub reporter: Pseudonym,
    pub gps: GeoPoint,
    pub kind: IncidentKind,
    pub image_hash: Hash,
    pub zone: ZoneId,
    pub reported_at: Millis,
}
