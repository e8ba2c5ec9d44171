//! Ordering service: Raft-replicated envelope log, deterministic block
//! cutting over the committed prefix, and block delivery to peers.

mod cutter;
mod orderer;
pub mod raft;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::identity::Millis;
use crate::ledger::Transaction;

pub use cutter::{cut_block, BlockCutPolicy, BlockCutter};
pub use orderer::{OrdererConfig, OrdererNode};
pub use raft::{Command, LogEntry, RaftConfig, RaftMessage, RaftNode, RaftRole};

/// An endorsed transaction as handed to the ordering service. Orderers do
/// not look inside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub transaction: Transaction,
    pub received_at: Millis,
}

impl Envelope {
    pub fn new(transaction: Transaction, received_at: Millis) -> Self {
        Envelope { transaction, received_at }
    }

    /// Bytes this envelope contributes to a block.
    pub fn size(&self) -> usize {
        codec::encoded_len(&self.transaction)
    }
}
