//! Virtual vehicles, the road network they drive on, and the scripted
//! adaptive-guidance scenario.

mod graph;
mod scenario;
mod vehicle;

pub use graph::{plan_route, Reroute, RoadGraph, RouteError, RouteState, PENALTY_FACTOR};
pub use scenario::{
    event_log_jsonl, run_scenario_adaptive_guidance, GuidanceConfig, GuidanceReport, ScenarioAssertionFailed,
};
pub use vehicle::{
    ContractMix, RequestPlan, ScriptedAction, SubmitMode, VehicleConfig, VehicleNode, VehicleTimeouts, Workload,
    DEFAULT_GPS,
};
