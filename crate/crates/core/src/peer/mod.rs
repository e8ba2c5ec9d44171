//! Edge-server peer: endorser and committer.

mod node;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contracts::{self, classify_priority, Invocation, Priority, QueryResult, QueryTarget, ZoneId};
use crate::identity::{verify, verify_certificate, Certificate, Identity, Millis, Pseudonym, PublicKey, Role};
use crate::ledger::{
    apply_block, Block, Chain, Endorsement, Hash, LedgerError, Proposal, ReadWriteSet, SignedProposal, StateView,
    Transaction, TransactionId, TxValidity, Version, WorldState,
};
use crate::message::{Message, Notification};
use crate::netsim::NodeAddress;

pub use node::{PeerConfig, PeerNode};

/// Minimum number of distinct peers whose endorsements must verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementPolicy {
    pub required: usize,
}

impl Default for EndorsementPolicy {
    fn default() -> Self {
        EndorsementPolicy { required: 1 }
    }
}

/// What every node knows about the deployment: the CA key and the peer
/// certificates endorsements are checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Membership {
    pub ca_public_key: PublicKey,
    pub peers: BTreeMap<Pseudonym, PublicKey>,
    pub policy: EndorsementPolicy,
}

impl Membership {
    pub fn new(ca_public_key: PublicKey, peer_certs: &[Certificate], policy: EndorsementPolicy) -> Self {
        let peers = peer_certs
            .iter()
            .filter(|c| c.role == Role::Peer && verify_certificate(c, &ca_public_key, c.valid_from))
            .map(|c| (c.subject, c.subject_public_key.clone()))
            .collect();
        Membership { ca_public_key, peers, policy }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeerError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("endorsement refused: {0}")]
    EndorseRefused(#[from] contracts::ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Signs a proposal on behalf of a vehicle.
pub fn sign_proposal(
    identity: &Identity,
    call: contracts::ContractCall,
    nonce: u64,
    created_at: Millis,
) -> SignedProposal {
    let proposal = Proposal { creator_cert: identity.certificate.clone(), call, nonce, created_at };
    let signature = identity.keys.sign(proposal.id().0.as_bytes());
    SignedProposal { proposal, signature }
}

fn check_client(
    cert: &Certificate,
    txid: &TransactionId,
    sig: &crate::identity::Signature,
    ca: &PublicKey,
    at: Millis,
) -> Result<(), String> {
    if cert.role != Role::Vehicle {
        return Err(format!("certificate role {:?} may not transact", cert.role));
    }
    if !verify_certificate(cert, ca, at) {
        return Err("certificate does not verify".into());
    }
    if !verify(&cert.subject_public_key, txid.0.as_bytes(), sig) {
        return Err("client signature does not verify".into());
    }
    Ok(())
}

/// World state plus the writes of earlier valid transactions in the block
/// being validated.
struct Overlay<'a> {
    base: &'a WorldState,
    written: HashMap<&'a str, Version>,
}

impl Overlay<'_> {
    fn version(&self, key: &str) -> Option<Version> {
        self.written.get(key).copied().or_else(|| self.base.version_of(key))
    }
}

/// Point-in-time view of a peer for inspection and export.
#[derive(Debug, Clone, Serialize)]
pub struct PeerSnapshot {
    pub index: u32,
    pub zone: ZoneId,
    pub height: u64,
    pub state_hash: Hash,
    pub connected: Vec<(Pseudonym, NodeAddress)>,
    #[serde(skip)]
    pub blocks: Vec<Block>,
}

/// Durable and volatile state of one peer.
#[derive(Debug, Clone)]
pub struct PeerState {
    index: u32,
    identity: Identity,
    zone: ZoneId,
    membership: Arc<Membership>,
    chain: Chain,
    world: WorldState,
    committed: HashMap<TransactionId, (u64, TxValidity)>,
    connected: BTreeMap<Pseudonym, NodeAddress>,
}

impl PeerState {
    pub fn new(index: u32, identity: Identity, zone: ZoneId, membership: Arc<Membership>) -> Self {
        PeerState {
            index,
            identity,
            zone,
            membership,
            chain: Chain::new(),
            world: WorldState::new(),
            committed: HashMap::new(),
            connected: BTreeMap::new(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }
    pub fn zone(&self) -> &ZoneId {
        &self.zone
    }
    pub fn pseudonym(&self) -> Pseudonym {
        self.identity.pseudonym()
    }
    pub fn chain(&self) -> &Chain {
        &self.chain
    }
    pub fn world(&self) -> &WorldState {
        &self.world
    }
    pub fn height(&self) -> u64 {
        self.chain.height()
    }
    pub fn state_hash(&self) -> Hash {
        self.world.state_hash()
    }
    pub fn connected(&self) -> impl Iterator<Item = (&Pseudonym, &NodeAddress)> {
        self.connected.iter()
    }
    pub fn snapshot(&self) -> PeerSnapshot {
        PeerSnapshot {
            index: self.index,
            zone: self.zone.clone(),
            height: self.height(),
            state_hash: self.state_hash(),
            connected: self.connected.iter().map(|(p, a)| (*p, *a)).collect(),
            blocks: self.chain.blocks().to_vec(),
        }
    }
    pub fn tx_status(&self, txid: &TransactionId) -> Option<(u64, TxValidity)> {
        self.committed.get(txid).copied()
    }

    /// Simulates a proposal against committed state. Never mutates state.
    pub fn endorse(&self, signed: &SignedProposal) -> Result<(Endorsement, ReadWriteSet), PeerError> {
        let p = &signed.proposal;
        let txid = p.id();
        check_client(&p.creator_cert, &txid, &signed.signature, &self.membership.ca_public_key, p.created_at)
            .map_err(PeerError::AuthFailure)?;
        let rw = contracts::execute(&p.call, Invocation { caller: p.creator(), txid }, &self.world)?;
        let rw_hash = rw.hash();
        let signature = self.identity.keys.sign(&Endorsement::signed_bytes(&txid.0, &rw_hash));
        let endorsement =
            Endorsement { peer: self.pseudonym(), proposal_hash: txid.0, rw_set_hash: rw_hash, signature };
        Ok((endorsement, rw))
    }

    fn endorsements_ok(&self, tx: &Transaction) -> bool {
        let rw_hash = tx.rw_set.hash();
        let msg = Endorsement::signed_bytes(&tx.id.0, &rw_hash);
        let distinct: BTreeSet<Pseudonym> = tx
            .endorsements
            .iter()
            .filter(|e| e.proposal_hash == tx.id.0 && e.rw_set_hash == rw_hash)
            .filter(|e| self.membership.peers.get(&e.peer).is_some_and(|pk| verify(pk, &msg, &e.signature)))
            .map(|e| e.peer)
            .collect();
        distinct.len() >= self.membership.policy.required
    }

    /// Computes validity flags for a block that links onto the local chain.
    /// Depends only on the chain and the block, so every honest peer
    /// computes the same flags.
    pub fn validate_block(&self, block: &Block) -> Result<Vec<TxValidity>, LedgerError> {
        self.chain.check_links_onto(block)?;
        let mut overlay = Overlay { base: &self.world, written: HashMap::new() };
        let mut seen: HashSet<TransactionId> = HashSet::new();
        let mut flags = Vec::with_capacity(block.transactions.len());
        for (i, tx) in block.transactions.iter().enumerate() {
            let flag = if tx.computed_id() != tx.id
                || tx.creator != tx.creator_cert.subject
                || check_client(
                    &tx.creator_cert,
                    &tx.id,
                    &tx.client_signature,
                    &self.membership.ca_public_key,
                    tx.created_at,
                )
                .is_err()
            {
                TxValidity::SignatureInvalid
            } else if self.committed.contains_key(&tx.id) || !seen.insert(tx.id) {
                TxValidity::ConflictInvalid
            } else if !self.endorsements_ok(tx) {
                TxValidity::EndorsementInvalid
            } else if tx.rw_set.reads.iter().any(|(k, v)| overlay.version(k) != *v) {
                TxValidity::ConflictInvalid
            } else {
                TxValidity::Valid
            };
            if flag.is_valid() {
                let version = Version::new(block.number(), i as u64);
                for (k, _) in &tx.rw_set.writes {
                    overlay.written.insert(k.as_str(), version);
                }
            }
            flags.push(flag);
        }
        Ok(flags)
    }

    /// Appends a block whose flags were set by [`Self::validate_block`].
    pub fn commit_block(&mut self, block: Block) -> Result<(), LedgerError> {
        self.chain.check_links_onto(&block)?;
        let world = std::mem::take(&mut self.world);
        self.world = apply_block(world, &block);
        for (tx, flag) in block.transactions.iter().zip(&block.validity) {
            self.committed.entry(tx.id).or_insert((block.number(), *flag));
        }
        self.chain.append(block)?;
        Ok(())
    }

    /// Messages owed to connected vehicles for a just-committed block:
    /// commit events to the creators, and incident notifications to all.
    pub fn deliver_events(&self, block: &Block) -> Vec<(NodeAddress, Message)> {
        let mut out = Vec::new();
        for (tx, flag) in block.transactions.iter().zip(&block.validity) {
            if let Some(addr) = self.connected.get(&tx.creator) {
                out.push((*addr, Message::CommitEvent { txid: tx.id, block_number: block.number(), validity: *flag }));
            }
            if !flag.is_valid() || classify_priority(&tx.call) != Priority::High {
                continue;
            }
            let Some(report) = tx.call.incident() else { continue };
            let note = Notification {
                txid: tx.id,
                block_number: block.number(),
                zone: report.zone,
                kind: report.kind,
                gps: report.gps,
                reporter: report.reporter,
                image_hash: report.image_hash,
            };
            for addr in self.connected.values() {
                out.push((*addr, Message::Notification(note.clone())));
            }
        }
        out
    }

    /// Idempotent. Returns whether the set changed.
    pub fn register_vehicle(&mut self, cert: &Certificate, addr: NodeAddress, now: Millis) -> Result<bool, PeerError> {
        if cert.role != Role::Vehicle || !verify_certificate(cert, &self.membership.ca_public_key, now) {
            return Err(PeerError::AuthFailure("vehicle certificate rejected".into()));
        }
        Ok(self.connected.insert(cert.subject, addr) != Some(addr))
    }

    pub fn deregister_vehicle(&mut self, pseudonym: &Pseudonym) -> bool {
        self.connected.remove(pseudonym).is_some()
    }

    pub fn query(&self, target: &QueryTarget) -> QueryResult {
        contracts::query_info(target, &self.world)
    }

    /// Crash recovery: only the chain survives; state is replayed from it.
    pub fn recover(&mut self) {
        self.world = WorldState::replay(self.chain.blocks());
        self.committed.clear();
        for b in self.chain.blocks() {
            for (tx, flag) in b.transactions.iter().zip(&b.validity) {
                self.committed.entry(tx.id).or_insert((b.number(), *flag));
            }
        }
        self.connected.clear();
    }
}
