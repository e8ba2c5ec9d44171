//! Blocks, the hash-linked chain, Merkle commitments and the versioned
//! world state.

pub(crate) mod block;
pub mod export;
mod hash;
mod merkle;
mod state;

pub use block::{
    append_block, hash_header, tx_digest, validate_chain, Block, BlockHeader, Chain, ChainViolation, Endorsement,
    LedgerError, Proposal, SignedProposal, Transaction, TxValidity, ViolationKind,
};
pub use hash::{Hash, TransactionId};
pub use merkle::merkle_root;
pub use state::{apply_block, ReadWriteSet, StateEntry, StateView, Version, WorldState};
