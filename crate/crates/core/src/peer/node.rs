use std::any::Any;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use super::{PeerError, PeerState};
use crate::codec;
use crate::contracts::{classify_priority, Priority};
use crate::ledger::{Block, SignedProposal};
use crate::message::{EndorseFailure, Event, Message};
use crate::netsim::{Context, CostModel, NodeAddress, NodeKind, Process, WireMessage};

const DRAIN: u64 = 1;

/// Out-of-order blocks kept while waiting for the gap to fill.
const MAX_BUFFERED: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct PeerConfig {
    pub cost: CostModel,
}

struct Queued {
    priority: Priority,
    seq: Reverse<u64>,
    from: NodeAddress,
    proposal: SignedProposal,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.priority, self.seq) == (other.priority, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // High before low, FIFO within a class.
    fn cmp(&self, other: &Self) -> Ordering {
        (self.priority, self.seq).cmp(&(other.priority, other.seq))
    }
}

/// Peer actor around [`PeerState`].
pub struct PeerNode {
    state: PeerState,
    config: PeerConfig,
    queue: BinaryHeap<Queued>,
    seq: u64,
    draining: bool,
    buffered: BTreeMap<u64, Arc<Block>>,
}

impl PeerNode {
    pub fn new(state: PeerState, config: PeerConfig) -> Self {
        PeerNode { state, config, queue: BinaryHeap::new(), seq: 0, draining: false, buffered: BTreeMap::new() }
    }

    pub fn state(&self) -> &PeerState {
        &self.state
    }

    fn endorse_next(&mut self, ctx: &mut Context<'_, Message, Event>) {
        let Some(q) = self.queue.pop() else {
            self.draining = false;
            return;
        };
        ctx.consume(self.config.cost.for_bytes(codec::encoded_len(&q.proposal)));
        let txid = q.proposal.proposal.id();
        let outcome = self.state.endorse(&q.proposal).map_err(|e| match e {
            PeerError::AuthFailure(m) => EndorseFailure::AuthFailure(m),
            other => EndorseFailure::EndorseRefused(other.to_string()),
        });
        ctx.send(q.from, Message::ProposalResponse { txid, outcome });
        if self.queue.is_empty() {
            self.draining = false;
        } else {
            // Fires once this endorsement's service time is over, after any
            // proposals that arrived meanwhile have been queued.
            ctx.set_timer(ctx.consumed(), DRAIN);
        }
    }

    fn on_block(&mut self, ctx: &mut Context<'_, Message, Event>, block: Arc<Block>) {
        let height = self.state.height();
        if block.number() > height && self.buffered.len() < MAX_BUFFERED {
            self.buffered.insert(block.number(), block);
            return;
        }
        if block.number() != height {
            return;
        }
        let mut next = Some(block);
        while let Some(b) = next {
            ctx.consume(self.config.cost.for_bytes(codec::encoded_len(&*b)));
            let mut block = Arc::unwrap_or_clone(b);
            match self.state.validate_block(&block) {
                Ok(flags) => block.validity = flags,
                Err(e) => {
                    log::warn!("{}: rejecting block {}: {e}", ctx.me(), block.number());
                    return;
                }
            }
            let number = block.number();
            let valid = block.validity.iter().filter(|f| f.is_valid()).count();
            let transactions = block.transactions.len();
            let outbox = self.state.deliver_events(&block);
            if let Err(e) = self.state.commit_block(block) {
                log::warn!("{}: commit of block {number} failed: {e}", ctx.me());
                return;
            }
            ctx.emit(Event::BlockCommitted { number, transactions, valid, state_hash: self.state.state_hash() });
            for (to, msg) in outbox {
                ctx.send(to, msg);
            }
            self.buffered.retain(|n, _| *n > number);
            next = self.buffered.remove(&(number + 1));
        }
    }
}

impl Process<Message, Event> for PeerNode {
    fn on_message(&mut self, ctx: &mut Context<'_, Message, Event>, from: NodeAddress, msg: Message) {
        match msg {
            Message::Proposal(proposal) => {
                self.seq += 1;
                let priority = classify_priority(&proposal.proposal.call);
                self.queue.push(Queued { priority, seq: Reverse(self.seq), from, proposal });
                if !self.draining {
                    self.draining = true;
                    ctx.set_timer(ctx.consumed(), DRAIN);
                }
            }
            Message::BlockDeliver(block) if from.kind == NodeKind::Orderer => {
                self.on_block(ctx, block);
                ctx.send(from, Message::BlockAck { next: self.state.height() });
            }
            Message::Register(cert) => {
                let ok = match self.state.register_vehicle(&cert, from, ctx.now().as_millis()) {
                    Ok(changed) => {
                        if changed {
                            ctx.emit(Event::VehicleRegistered { peer: self.state.index(), vehicle: cert.subject });
                        }
                        true
                    }
                    Err(_) => false,
                };
                ctx.send(from, Message::Registered { ok });
            }
            Message::Deregister(p) => {
                self.state.deregister_vehicle(&p);
            }
            Message::TxStatusQuery { txid } => {
                ctx.send(from, Message::TxStatus { txid, status: self.state.tx_status(&txid) });
            }
            Message::Query { request, target } => {
                ctx.send(from, Message::QueryResponse { request, result: self.state.query(&target) });
            }
            other => log::debug!("{}: ignoring {} from {from}", ctx.me(), other.kind()),
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<'_, Message, Event>, token: u64) {
        if token == DRAIN {
            self.endorse_next(ctx);
        }
    }

    fn on_crash(&mut self) {
        self.queue.clear();
        self.draining = false;
        self.buffered.clear();
        self.state.recover();
    }

    fn on_restart(&mut self, _ctx: &mut Context<'_, Message, Event>) {}

    fn as_any(&self) -> &dyn Any {
        self
    }
}
