use std::collections::BTreeMap;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::block::Block;
use super::hash::Hash;
use crate::codec;

/// Position of the transaction that last wrote a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version {
    pub block_number: u64,
    pub tx_index: u64,
}

impl Version {
    pub fn new(block_number: u64, tx_index: u64) -> Self {
        Version { block_number, tx_index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub value: Bytes,
    pub version: Version,
}

/// Keys read (with the version observed, `None` when absent) and values a
/// transaction proposes to write.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadWriteSet {
    pub reads: Vec<(String, Option<Version>)>,
    pub writes: Vec<(String, Bytes)>,
}

impl ReadWriteSet {
    pub fn hash(&self) -> Hash {
        Hash::digest(&codec::encode(self))
    }

    pub fn keys_distinct(&self) -> bool {
        fn distinct<'a>(keys: impl Iterator<Item = &'a String>) -> bool {
            let mut seen = std::collections::BTreeSet::new();
            keys.into_iter().all(|k| seen.insert(k))
        }
        distinct(self.reads.iter().map(|(k, _)| k)) && distinct(self.writes.iter().map(|(k, _)| k))
    }
}

/// Read-only access to committed state.
pub trait StateView {
    fn get(&self, key: &str) -> Option<&StateEntry>;
    /// Entries whose key starts with `prefix`, in key order.
    fn scan_prefix<'a>(&'a self, prefix: &str) -> Vec<(&'a str, &'a StateEntry)>;

    fn version_of(&self, key: &str) -> Option<Version> {
        self.get(key).map(|e| e.version)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    entries: BTreeMap<String, StateEntry>,
}

impl WorldState {
    pub fn new() -> Self {
        WorldState::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn put(&mut self, key: String, value: Bytes, version: Version) {
        self.entries.insert(key, StateEntry { value, version });
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StateEntry)> {
        self.entries.iter()
    }

    pub fn encode(&self) -> Vec<u8> {
        codec::encode(self)
    }

    /// Digest of the canonical encoding; equal states have equal hashes.
    pub fn state_hash(&self) -> Hash {
        Hash::digest(&self.encode())
    }

    /// Rebuild from a chain by replaying every block.
    pub fn replay<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> Self {
        blocks.into_iter().fold(WorldState::new(), apply_block)
    }
}

impl StateView for WorldState {
    fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    fn scan_prefix<'a>(&'a self, prefix: &str) -> Vec<(&'a str, &'a StateEntry)> {
        self.entries
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_str(), v))
            .collect()
    }
}

/// Applies the write sets of valid transactions, in order.
pub fn apply_block(mut state: WorldState, block: &Block) -> WorldState {
    for (index, (tx, flag)) in block.transactions.iter().zip(&block.validity).enumerate() {
        if !flag.is_valid() {
            continue;
        }
        let version = Version::new(block.header.number, index as u64);
        for (key, value) in &tx.rw_set.writes {
            state.put(key.clone(), value.clone(), version);
        }
    }
    state
}
