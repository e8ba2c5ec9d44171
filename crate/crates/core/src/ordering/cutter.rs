use serde::{Deserialize, Serialize};

use super::Envelope;
use crate::ledger::{Block, BlockHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockCutPolicy {
    pub max_message_count: usize,
    pub max_bytes: usize,
    pub batch_timeout_ms: u64,
}

impl Default for BlockCutPolicy {
    fn default() -> Self {
        BlockCutPolicy { max_message_count: 10, max_bytes: 512 * 1024, batch_timeout_ms: 250 }
    }
}

impl BlockCutPolicy {
    pub fn is_valid(&self) -> bool {
        self.max_message_count > 0 && self.max_bytes > 0 && self.batch_timeout_ms > 0
    }
}

/// Greedy fill from the front of `pending`: take envelopes while both the
/// count and byte limits hold. The first envelope is always taken, so one
/// oversized envelope forms a block on its own.
///
/// Returns the block and how many envelopes it consumed.
pub fn cut_block(policy: &BlockCutPolicy, pending: &[Envelope], last: Option<&BlockHeader>) -> Option<(Block, usize)> {
    let first = pending.first()?;
    let mut bytes = first.size();
    let mut take = 1;
    for env in &pending[1..] {
        if take == policy.max_message_count || bytes + env.size() > policy.max_bytes {
            break;
        }
        bytes += env.size();
        take += 1;
    }
    let txs = pending[..take].iter().map(|e| e.transaction.clone()).collect();
    Some((Block::next_after(last, txs), take))
}

/// Incremental cutter fed with committed log entries in order.
///
/// Every orderer runs one over the same committed sequence, so they all
/// produce the same blocks.
#[derive(Debug, Clone)]
pub struct BlockCutter {
    policy: BlockCutPolicy,
    pending: Vec<Envelope>,
    pending_bytes: usize,
    last: Option<BlockHeader>,
}

impl BlockCutter {
    pub fn new(policy: BlockCutPolicy) -> Self {
        BlockCutter { policy, pending: Vec::new(), pending_bytes: 0, last: None }
    }

    pub fn policy(&self) -> &BlockCutPolicy {
        &self.policy
    }

    pub fn next_number(&self) -> u64 {
        self.last.as_ref().map_or(0, |h| h.number + 1)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Adds a committed envelope; returns any blocks that became full.
    pub fn ordered(&mut self, env: Envelope) -> Vec<Block> {
        let mut out = Vec::new();
        let size = env.size();
        if !self.pending.is_empty() && self.pending_bytes + size > self.policy.max_bytes {
            out.extend(self.cut());
        }
        self.pending_bytes += size;
        self.pending.push(env);
        if self.pending.len() >= self.policy.max_message_count || self.pending_bytes >= self.policy.max_bytes {
            out.extend(self.cut());
        }
        out
    }

    /// A committed timeout marker for block `number`. Stale markers (the
    /// block was already cut by size or count) are ignored.
    pub fn timeout(&mut self, number: u64) -> Option<Block> {
        if number == self.next_number() {
            self.cut()
        } else {
            None
        }
    }

    fn cut(&mut self) -> Option<Block> {
        let (block, n) = cut_block(&self.policy, &self.pending, self.last.as_ref())?;
        self.pending.drain(..n);
        self.pending_bytes = self.pending.iter().map(Envelope::size).sum();
        self.last = Some(block.header.clone());
        Some(block)
    }
}
