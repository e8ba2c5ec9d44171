use serde::{Deserialize, Serialize};

use super::{ContractCall, REPORT_OP, SITUATION_CONTRACT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Priority {
    Low,
    High,
}

/// Situation reports (accidents, congestion, road condition, weather) are
/// urgent; vehicle bookkeeping, queries and anything unknown are not.
pub fn classify_priority(call: &ContractCall) -> Priority {
    if call.contract == SITUATION_CONTRACT && call.operation == REPORT_OP {
        Priority::High
    } else {
        Priority::Low
    }
}
