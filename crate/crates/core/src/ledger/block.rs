use serde::{Deserialize, Serialize};

use super::hash::{Hash, TransactionId};
use super::merkle::merkle_root;
use super::state::ReadWriteSet;
use crate::codec;
use crate::contracts::ContractCall;
use crate::identity::{Certificate, Millis, Pseudonym, Signature};

/// Content a client signs and peers simulate. Its digest is the
/// transaction id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub creator_cert: Certificate,
    pub call: ContractCall,
    pub nonce: u64,
    pub created_at: Millis,
}

impl Proposal {
    pub fn id(&self) -> TransactionId {
        TransactionId(Hash::digest(&codec::encode(self)))
    }

    pub fn creator(&self) -> Pseudonym {
        self.creator_cert.subject
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedProposal {
    pub proposal: Proposal,
    /// Client signature over the transaction id bytes.
    pub signature: Signature,
}

/// A peer's signed statement that simulating a proposal produced a given
/// read/write set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endorsement {
    pub peer: Pseudonym,
    pub proposal_hash: Hash,
    pub rw_set_hash: Hash,
    pub signature: Signature,
}

impl Endorsement {
    pub fn signed_bytes(proposal_hash: &Hash, rw_set_hash: &Hash) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(64);
        bytes.extend_from_slice(proposal_hash.as_bytes());
        bytes.extend_from_slice(rw_set_hash.as_bytes());
        bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TransactionId,
    pub creator: Pseudonym,
    pub creator_cert: Certificate,
    pub call: ContractCall,
    pub nonce: u64,
    pub created_at: Millis,
    pub rw_set: ReadWriteSet,
    pub endorsements: Vec<Endorsement>,
    pub client_signature: Signature,
}

impl Transaction {
    pub fn from_endorsed(signed: SignedProposal, rw_set: ReadWriteSet, endorsements: Vec<Endorsement>) -> Self {
        let SignedProposal { proposal, signature } = signed;
        Transaction {
            id: proposal.id(),
            creator: proposal.creator(),
            creator_cert: proposal.creator_cert,
            call: proposal.call,
            nonce: proposal.nonce,
            created_at: proposal.created_at,
            rw_set,
            endorsements,
            client_signature: signature,
        }
    }

    pub fn proposal(&self) -> Proposal {
        Proposal {
            creator_cert: self.creator_cert.clone(),
            call: self.call.clone(),
            nonce: self.nonce,
            created_at: self.created_at,
        }
    }

    /// Recomputes the id from content.
    pub fn computed_id(&self) -> TransactionId {
        self.proposal().id()
    }

    pub fn payload_len(&self) -> usize {
        self.call.payload.len()
    }
}

/// Digest of the full canonical encoding of a transaction; Merkle leaf.
pub fn tx_digest(tx: &Transaction) -> Hash {
    Hash::digest(&codec::encode(tx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxValidity {
    Valid,
    ConflictInvalid,
    EndorsementInvalid,
    SignatureInvalid,
}

impl TxValidity {
    pub fn is_valid(self) -> bool {
        self == TxValidity::Valid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub number: u64,
    pub previous_hash: Hash,
    pub data_hash: Hash,
}

/// SHA-256 over `number (8 bytes BE) || previous_hash || data_hash`.
pub fn hash_header(header: &BlockHeader) -> Hash {
    Hash::digest(&codec::encode(header))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    /// Per-transaction flags, outside the hashed header. Blocks leave the
    /// orderer with every flag `Valid`; committers overwrite them with the
    /// result of validation.
    pub validity: Vec<TxValidity>,
}

impl Block {
    pub fn new(number: u64, previous_hash: Hash, transactions: Vec<Transaction>) -> Self {
        let data_hash = Self::compute_data_hash(&transactions);
        let validity = vec![TxValidity::Valid; transactions.len()];
        Block { header: BlockHeader { number, previous_hash, data_hash }, transactions, validity }
    }

    /// Builds the successor of `previous` (or the first block for `None`).
    pub fn next_after(previous: Option<&BlockHeader>, transactions: Vec<Transaction>) -> Self {
        match previous {
            Some(h) => Block::new(h.number + 1, hash_header(h), transactions),
            None => Block::new(0, Hash::ZERO, transactions),
        }
    }

    pub fn compute_data_hash(transactions: &[Transaction]) -> Hash {
        let leaves: Vec<Hash> = transactions.iter().map(tx_digest).collect();
        merkle_root(&leaves)
    }

    pub fn hash(&self) -> Hash {
        hash_header(&self.header)
    }

    pub fn number(&self) -> u64 {
        self.header.number
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("block {got} does not link onto chain of height {height}")]
    ChainLinkError { height: u64, got: u64 },
    #[error("block {number}: data hash does not match the Merkle root of its transactions")]
    DataHashError { number: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Number,
    Link,
    DataHash,
    TransactionId,
    FlagCount,
    Undecodable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainViolation {
    pub index: usize,
    pub kind: ViolationKind,
}

fn check_link(previous: Option<&Block>, block: &Block, height: u64) -> Result<(), LedgerError> {
    let expected_prev = previous.map(Block::hash).unwrap_or(Hash::ZERO);
    if block.header.number != height || block.header.previous_hash != expected_prev {
        return Err(LedgerError::ChainLinkError { height, got: block.header.number });
    }
    Ok(())
}

/// Appends after checking linkage and the data hash.
pub fn append_block(chain: &mut Vec<Block>, block: Block) -> Result<(), LedgerError> {
    check_link(chain.last(), &block, chain.len() as u64)?;
    if Block::compute_data_hash(&block.transactions) != block.header.data_hash {
        return Err(LedgerError::DataHashError { number: block.header.number });
    }
    chain.push(block);
    Ok(())
}

/// Checks every link, transaction id and data hash; reports the first
/// offending block.
pub fn validate_chain(chain: &[Block]) -> Result<(), ChainViolation> {
    for (index, block) in chain.iter().enumerate() {
        let fail = |kind| Err(ChainViolation { index, kind });
        if block.header.number != index as u64 {
            return fail(ViolationKind::Number);
        }
        let prev = if index == 0 { Hash::ZERO } else { chain[index - 1].hash() };
        if block.header.previous_hash != prev {
            return fail(ViolationKind::Link);
        }
        if block.validity.len() != block.transactions.len() {
            return fail(ViolationKind::FlagCount);
        }
        if block.transactions.iter().any(|tx| tx.computed_id() != tx.id) {
            return fail(ViolationKind::TransactionId);
        }
        if Block::compute_data_hash(&block.transactions) != block.header.data_hash {
            return fail(ViolationKind::DataHash);
        }
    }
    Ok(())
}

/// An append-only, verified chain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new() -> Self {
        Chain::default()
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn last_header(&self) -> Option<&BlockHeader> {
        self.blocks.last().map(|b| &b.header)
    }

    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        append_block(&mut self.blocks, block)
    }

    /// Checks linkage only, as a committer does before validating.
    pub fn check_links_onto(&self, block: &Block) -> Result<(), LedgerError> {
        check_link(self.blocks.last(), block, self.height())
    }
}
