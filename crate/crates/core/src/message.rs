//! Wire messages exchanged between nodes and the events nodes emit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::contracts::{GeoPoint, IncidentKind, QueryResult, QueryTarget, ZoneId};
use crate::identity::{Certificate, Pseudonym};
use crate::ledger::{Block, Endorsement, Hash, ReadWriteSet, SignedProposal, TransactionId, TxValidity};
use crate::netsim::WireMessage;
use crate::ordering::{Envelope, RaftMessage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndorseFailure {
    AuthFailure(String),
    EndorseRefused(String),
}

/// Push sent to vehicles when a high-priority transaction commits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub txid: TransactionId,
    pub block_number: u64,
    pub zone: ZoneId,
    pub kind: IncidentKind,
    pub gps: GeoPoint,
    pub reporter: Pseudonym,
    pub image_hash: Hash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Proposal(SignedProposal),
    ProposalResponse {
        txid: TransactionId,
        outcome: Result<(Endorsement, ReadWriteSet), EndorseFailure>,
    },
    SubmitEnvelope(Envelope),
    SubmitAck {
        txid: TransactionId,
    },
    /// `leader: None` means no leader is known (election in progress).
    SubmitRedirect {
        txid: TransactionId,
        leader: Option<u32>,
    },
    Raft(RaftMessage),
    BlockDeliver(Arc<Block>),
    /// Next block number the peer expects.
    BlockAck {
        next: u64,
    },
    Notification(Notification),
    /// Commit outcome for a transaction created by the receiving vehicle.
    CommitEvent {
        txid: TransactionId,
        block_number: u64,
        validity: TxValidity,
    },
    Register(Certificate),
    Deregister(Pseudonym),
    Registered {
        ok: bool,
    },
    TxStatusQuery {
        txid: TransactionId,
    },
    TxStatus {
        txid: TransactionId,
        status: Option<(u64, TxValidity)>,
    },
    Query {
        request: u64,
        target: QueryTarget,
    },
    QueryResponse {
        request: u64,
        result: QueryResult,
    },
}

impl WireMessage for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Proposal(_) => "proposal",
            Message::ProposalResponse { .. } => "proposal-response",
            Message::SubmitEnvelope(_) => "submit-envelope",
            Message::SubmitAck { .. } => "submit-ack",
            Message::SubmitRedirect { .. } => "submit-redirect",
            Message::Raft(RaftMessage::RequestVote { .. }) => "request-vote",
            Message::Raft(RaftMessage::VoteResponse { .. }) => "vote-response",
            Message::Raft(RaftMessage::AppendEntries { .. }) => "append-entries",
            Message::Raft(RaftMessage::AppendResponse { .. }) => "append-response",
            Message::BlockDeliver(_) => "block-deliver",
            Message::BlockAck { .. } => "block-ack",
            Message::Notification(_) => "notification",
            Message::CommitEvent { .. } => "commit-event",
            Message::Register(_) => "register",
            Message::Deregister(_) => "deregister",
            Message::Registered { .. } => "registered",
            Message::TxStatusQuery { .. } => "tx-status-query",
            Message::TxStatus { .. } => "tx-status",
            Message::Query { .. } => "query",
            Message::QueryResponse { .. } => "query-response",
        }
    }

    fn wire_len(&self) -> usize {
        codec::encoded_len(self)
    }
}

/// Observable events, written as JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    LeaderElected { term: u64 },
    BlockCut { number: u64, transactions: usize },
    BlockCommitted { number: u64, transactions: usize, valid: usize, state_hash: Hash },
    VehicleRegistered { peer: u32, vehicle: Pseudonym },
    RequestStarted { request: u64 },
    Proposed { request: u64, txid: TransactionId, attempt: u32 },
    Submitted { request: u64, txid: TransactionId, endorsements: usize, orderer: u32 },
    TxOutcome { request: u64, txid: TransactionId, block: u64, validity: TxValidity },
    RequestCompleted { request: u64, txid: TransactionId, block: u64 },
    RequestFailed { request: u64, reason: String },
    NotificationReceived { txid: TransactionId, peer: u32 },
    Notified { txid: TransactionId, zone: ZoneId, kind: IncidentKind, block: u64, peer: u32 },
    Rerouted { txid: TransactionId, edge: (usize, usize), old_route: Vec<usize>, new_route: Vec<usize> },
    QueryAnswered { request: u64, empty: bool },
}
