//! Built-in smart contracts and the deterministic execution engine.
//!
//! Execution simulates a call against a read-only state view and yields a
//! [`ReadWriteSet`]; nothing is applied until the transaction is ordered and
//! validated.
//!
//! Key layout:
//! - `vehicle/<pseudonym>` holds the latest [`VehicleRecord`]
//! - `incident/<zone>/<txid>` holds one [`IncidentReport`]
//! - `zone-head/<zone>` holds the id of the latest incident in the zone

mod priority;
mod records;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

pub use priority::{classify_priority, Priority};
pub use records::{GeoPoint, IncidentKind, IncidentReport, VehicleRecord, ZoneId};

use crate::codec;
use crate::identity::Pseudonym;
pub use crate::ledger::ReadWriteSet;
use crate::ledger::{Hash, StateView, TransactionId};

pub const VEHICLE_CONTRACT: &str = "vehicle";
pub const SITUATION_CONTRACT: &str = "situation";
pub const UPDATE_OP: &str = "update";
pub const REPORT_OP: &str = "report";
pub const QUERY_OP: &str = "query";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractCall {
    pub contract: String,
    pub operation: String,
    pub args: Vec<Bytes>,
    pub payload: Bytes,
}

impl ContractCall {
    pub fn new(contract: impl Into<String>, operation: impl Into<String>, args: Vec<Bytes>, payload: Bytes) -> Self {
        ContractCall { contract: contract.into(), operation: operation.into(), args, payload }
    }

    pub fn update_vehicle(record: &VehicleRecord, payload: Bytes) -> Self {
        Self::new(VEHICLE_CONTRACT, UPDATE_OP, vec![codec::encode(record).into()], payload)
    }

    pub fn report_incident(report: &IncidentReport, image: Bytes) -> Self {
        Self::new(SITUATION_CONTRACT, REPORT_OP, vec![codec::encode(report).into()], image)
    }

    pub fn query(target: &QueryTarget) -> Self {
        let contract = match target {
            QueryTarget::Vehicle(_) => VEHICLE_CONTRACT,
            QueryTarget::Zone(_) => SITUATION_CONTRACT,
        };
        Self::new(contract, QUERY_OP, vec![codec::encode(target).into()], Bytes::new())
    }

    pub fn is_query(&self) -> bool {
        self.operation == QUERY_OP
    }

    /// Decodes the incident carried by a report call, if this is one.
    pub fn incident(&self) -> Option<IncidentReport> {
        if self.contract != SITUATION_CONTRACT || self.operation != REPORT_OP {
            return None;
        }
        codec::decode(self.args.first()?).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("unknown contract {0:?}")]
    UnknownContract(String),
    #[error("contract runtime error: {0}")]
    ContractRuntimeError(String),
    #[error("caller {caller:?} may not write record of {target:?}")]
    PseudonymMismatch { caller: Pseudonym, target: Pseudonym },
    #[error("image hash does not match payload digest")]
    ImageHashMismatch,
}

fn runtime(msg: impl Into<String>) -> ContractError {
    ContractError::ContractRuntimeError(msg.into())
}

/// Who is calling, and the id the resulting transaction will carry.
#[derive(Debug, Clone, Copy)]
pub struct Invocation {
    pub caller: Pseudonym,
    pub txid: TransactionId,
}

pub fn vehicle_key(p: &Pseudonym) -> String {
    format!("vehicle/{p}")
}

pub fn incident_prefix(zone: &ZoneId) -> String {
    format!("incident/{zone}/")
}

pub fn incident_key(zone: &ZoneId, txid: &TransactionId) -> String {
    format!("incident/{zone}/{txid}")
}

pub fn zone_head_key(zone: &ZoneId) -> String {
    format!("zone-head/{zone}")
}

fn check_zone(zone: &ZoneId) -> Result<(), ContractError> {
    if zone.0.is_empty() || zone.0.contains('/') {
        return Err(runtime(format!("invalid zone id {:?}", zone.0)));
    }
    Ok(())
}

fn single_arg<T: serde::de::DeserializeOwned>(call: &ContractCall) -> Result<T, ContractError> {
    match call.args.as_slice() {
        [arg] => codec::decode(arg).map_err(|e| runtime(e.to_string())),
        _ => Err(runtime(format!("expected 1 argument, got {}", call.args.len()))),
    }
}

/// Simulates a call. Identical inputs always produce identical output.
pub fn execute(
    call: &ContractCall,
    invocation: Invocation,
    view: &impl StateView,
) -> Result<ReadWriteSet, ContractError> {
    match (call.contract.as_str(), call.operation.as_str()) {
        (VEHICLE_CONTRACT, UPDATE_OP) => update_vehicle_info(&single_arg(call)?, invocation.caller),
        (SITUATION_CONTRACT, REPORT_OP) => report_incident(&single_arg(call)?, &call.payload, invocation, view),
        (VEHICLE_CONTRACT | SITUATION_CONTRACT, QUERY_OP) => Ok(query_reads(&single_arg(call)?, view)),
        (VEHICLE_CONTRACT | SITUATION_CONTRACT, op) => Err(runtime(format!("unknown operation {op:?}"))),
        (other, _) => Err(ContractError::UnknownContract(other.to_string())),
    }
}

/// Upserts the caller's own vehicle record.
pub fn update_vehicle_info(record: &VehicleRecord, caller: Pseudonym) -> Result<ReadWriteSet, ContractError> {
    if record.pseudonym != caller {
        return Err(ContractError::PseudonymMismatch { caller, target: record.pseudonym });
    }
    if !record.gps.is_valid() {
        return Err(runtime("gps out of range"));
    }
    if record.owners.is_empty() {
        return Err(runtime("a registered vehicle needs at least one owner"));
    }
    Ok(ReadWriteSet { reads: Vec::new(), writes: vec![(vehicle_key(&caller), codec::encode(record).into())] })
}

/// Stores an incident under its own key and advances the zone head.
pub fn report_incident(
    report: &IncidentReport,
    image: &[u8],
    invocation: Invocation,
    view: &impl StateView,
) -> Result<ReadWriteSet, ContractError> {
    if report.image_hash != Hash::digest(image) {
        return Err(ContractError::ImageHashMismatch);
    }
    if report.reporter != invocation.caller {
        return Err(ContractError::PseudonymMismatch { caller: invocation.caller, target: report.reporter });
    }
    if !report.gps.is_valid() {
        return Err(runtime("gps out of range"));
    }
    check_zone(&report.zone)?;
    let head = zone_head_key(&report.zone);
    let observed = view.version_of(&head);
    Ok(ReadWriteSet {
        reads: vec![(head.clone(), observed)],
        writes: vec![
            (incident_key(&report.zone, &invocation.txid), codec::encode(report).into()),
            (head, Bytes::copy_from_slice(invocation.txid.0.as_bytes())),
        ],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryTarget {
    Vehicle(Pseudonym),
    Zone(ZoneId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QueryResult {
    Vehicle(Option<VehicleRecord>),
    Incidents(Vec<IncidentReport>),
}

impl QueryResult {
    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn is_empty(&self) -> bool {
        match self {
            QueryResult::Vehicle(r) => r.is_none(),
            QueryResult::Incidents(v) => v.is_empty(),
        }
    }
}

fn query_reads(target: &QueryTarget, view: &impl StateView) -> ReadWriteSet {
    let reads = match target {
        QueryTarget::Vehicle(p) => {
            let key = vehicle_key(p);
            let v = view.version_of(&key);
            vec![(key, v)]
        }
        QueryTarget::Zone(z) => {
            let head = zone_head_key(z);
            let mut reads = vec![(head.clone(), view.version_of(&head))];
            reads.extend(
                view.scan_prefix(&incident_prefix(z)).into_iter().map(|(k, e)| (k.to_string(), Some(e.version))),
            );
            reads
        }
    };
    ReadWriteSet { reads, writes: Vec::new() }
}

/// Read-only lookup; unknown targets give an empty result.
pub fn query_info(target: &QueryTarget, view: &impl StateView) -> QueryResult {
    match target {
        QueryTarget::Vehicle(p) => {
            QueryResult::Vehicle(view.get(&vehicle_key(p)).and_then(|e| codec::decode(&e.value).ok()))
        }
        QueryTarget::Zone(z) => {
            let mut found: Vec<(crate::ledger::Version, IncidentReport)> = view
                .scan_prefix(&incident_prefix(z))
                .into_iter()
                .filter_map(|(_, e)| Some((e.version, codec::decode(&e.value).ok()?)))
                .collect();
            found.sort_by_key(|(v, _)| *v);
            QueryResult::Incidents(found.into_iter().map(|(_, r)| r).collect())
        }
    }
}
