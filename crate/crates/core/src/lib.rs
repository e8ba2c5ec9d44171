//! Permissioned ledger and vehicle situation-awareness simulator.
//!
//! Vehicles report incidents to edge-server peers, which endorse them by
//! executing chaincode against their world state. A Raft-replicated
//! ordering service sequences the endorsed transactions into blocks, and
//! every peer validates and commits them, notifying subscribed vehicles.
//!
//! Everything runs in one process on top of [`netsim`], either in virtual
//! time (deterministic) or against the wall clock.

pub mod bench;
pub mod codec;
pub mod contracts;
pub mod deployment;
pub mod fleet;
pub mod identity;
pub mod ledger;
pub mod message;
pub mod netsim;
pub mod ordering;
pub mod peer;
pub mod system;
