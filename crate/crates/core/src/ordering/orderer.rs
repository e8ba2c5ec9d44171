use std::any::Any;
use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;

use super::raft::{Command, Output, RaftConfig, RaftNode};
use super::{BlockCutPolicy, BlockCutter, Envelope};
use crate::ledger::{Block, TransactionId};
use crate::message::{Event, Message};
use crate::netsim::{Context, CostModel, NodeAddress, NodeKind, Process, SimTime, WireMessage};

const ELECTION: u64 = 1 << 56;
const HEARTBEAT: u64 = 2 << 56;
const CUT: u64 = 3 << 56;
const RESEND: u64 = 4 << 56;
const KIND_MASK: u64 = 0xff << 56;

/// Blocks sent per peer per resend round.
const RESEND_WINDOW: usize = 4;

#[derive(Debug, Clone)]
pub struct OrdererConfig {
    pub index: u32,
    pub orderers: Vec<u32>,
    pub peers: Vec<u32>,
    pub raft: RaftConfig,
    pub cut: BlockCutPolicy,
    pub cost: CostModel,
    pub resend_ms: u64,
}

impl OrdererConfig {
    pub fn new(index: u32, orderers: u32, peers: u32) -> Self {
        OrdererConfig {
            index,
            orderers: (0..orderers).collect(),
            peers: (0..peers).collect(),
            raft: RaftConfig::default(),
            cut: BlockCutPolicy::default(),
            cost: CostModel::default(),
            resend_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PeerProgress {
    /// Next block the peer asked for; `None` until it has acked anything.
    next: Option<u64>,
    last_sent: Option<(u64, SimTime)>,
}

/// Orderer actor: Raft over envelopes, block cutting over the committed
/// prefix, and (on the leader) delivery of blocks to peers.
pub struct OrdererNode {
    config: OrdererConfig,
    raft: RaftNode,
    cutter: BlockCutter,
    blocks: Vec<Arc<Block>>,
    election_gen: u64,
    heartbeat_gen: u64,
    cut_armed: Option<u64>,
    progress: BTreeMap<u32, PeerProgress>,
    known: HashSet<TransactionId>,
}

impl OrdererNode {
    pub fn new(config: OrdererConfig) -> Self {
        let raft = RaftNode::new(config.index, config.orderers.clone(), &config.raft);
        let cutter = BlockCutter::new(config.cut);
        let mut node = OrdererNode {
            config,
            raft,
            cutter,
            blocks: Vec::new(),
            election_gen: 0,
            heartbeat_gen: 0,
            cut_armed: None,
            progress: BTreeMap::new(),
            known: HashSet::new(),
        };
        node.reset_progress();
        node
    }

    pub fn raft(&self) -> &RaftNode {
        &self.raft
    }

    /// Blocks derived from the committed log so far.
    pub fn blocks(&self) -> &[Arc<Block>] {
        &self.blocks
    }

    fn reset_progress(&mut self) {
        self.progress = self.config.peers.iter().map(|p| (*p, PeerProgress { next: None, last_sent: None })).collect();
    }

    fn arm_election(&mut self, ctx: &mut Context<'_, Message, Event>) {
        self.election_gen += 1;
        let r = &self.config.raft;
        let ms = ctx.rng().gen_range(r.election_timeout_min_ms..=r.election_timeout_max_ms);
        ctx.set_timer(Duration::from_millis(ms), ELECTION | self.election_gen);
    }

    fn arm_heartbeat(&mut self, ctx: &mut Context<'_, Message, Event>) {
        self.heartbeat_gen += 1;
        ctx.set_timer(self.config.raft.heartbeat(), HEARTBEAT | self.heartbeat_gen);
    }

    /// Carries out Raft outputs, applies newly committed entries and
    /// delivers any blocks they complete.
    fn pump(&mut self, ctx: &mut Context<'_, Message, Event>) {
        for out in self.raft.take_output() {
            match out {
                Output::Send(to, msg) => ctx.send(NodeAddress::orderer(to), Message::Raft(msg)),
                Output::ResetElectionTimer => self.arm_election(ctx),
                Output::BecameLeader => {
                    ctx.emit(Event::LeaderElected { term: self.raft.term() });
                    self.known = self
                        .raft
                        .log()
                        .iter()
                        .filter_map(|e| match &e.command {
                            Command::Envelope(env) => Some(env.transaction.id),
                            _ => None,
                        })
                        .collect();
                    self.reset_progress();
                    self.cut_armed = None;
                    self.arm_heartbeat(ctx);
                }
            }
        }
        let mut fresh = Vec::new();
        for (_, entry) in self.raft.take_committed() {
            match entry.command {
                Command::Noop => {}
                Command::Envelope(env) => fresh.extend(self.cutter.ordered(*env)),
                Command::Cut { block_number } => fresh.extend(self.cutter.timeout(block_number)),
            }
        }
        for block in fresh {
            let block = Arc::new(block);
            self.blocks.push(Arc::clone(&block));
            if self.raft.is_leader() {
                ctx.emit(Event::BlockCut { number: block.number(), transactions: block.transactions.len() });
                let now = ctx.now();
                for (peer, prog) in self.progress.iter_mut() {
                    if prog.next.is_none_or(|n| n == block.number()) {
                        prog.last_sent = Some((block.number(), now));
                        ctx.send(NodeAddress::peer(*peer), Message::BlockDeliver(Arc::clone(&block)));
                    }
                }
            }
        }
        self.maybe_arm_cut(ctx);
    }

    fn maybe_arm_cut(&mut self, ctx: &mut Context<'_, Message, Event>) {
        if !self.raft.is_leader() || self.cutter.pending_len() == 0 {
            return;
        }
        let n = self.cutter.next_number();
        if self.cut_armed != Some(n) {
            self.cut_armed = Some(n);
            ctx.set_timer(Duration::from_millis(self.config.cut.batch_timeout_ms), CUT | n);
        }
    }

    fn resend(&mut self, ctx: &mut Context<'_, Message, Event>) {
        let now = ctx.now();
        let patience = Duration::from_millis(self.config.resend_ms);
        let height = self.blocks.len() as u64;
        if height == 0 || !self.raft.is_leader() {
            return;
        }
        for (peer, prog) in self.progress.iter_mut() {
            let to = NodeAddress::peer(*peer);
            let recent = |prog: &PeerProgress, n: u64| {
                prog.last_sent.is_some_and(|(m, at)| m == n && now.saturating_sub(at) < patience)
            };
            match prog.next {
                None => {
                    // Probe with the latest block; the ack tells us where the peer is.
                    if !recent(prog, height - 1) {
                        prog.last_sent = Some((height - 1, now));
                        ctx.send(to, Message::BlockDeliver(Arc::clone(&self.blocks[height as usize - 1])));
                    }
                }
                Some(n) if n < height => {
                    if !recent(prog, n) {
                        let end = (n as usize + RESEND_WINDOW).min(height as usize);
                        for b in &self.blocks[n as usize..end] {
                            ctx.send(to, Message::BlockDeliver(Arc::clone(b)));
                        }
                        prog.last_sent = Some((n, now));
                    }
                }
                Some(_) => {}
            }
        }
    }

    fn on_submit(&mut self, ctx: &mut Context<'_, Message, Event>, from: NodeAddress, mut env: Envelope) {
        let txid = env.transaction.id;
        if !self.raft.is_leader() {
            let leader = self.raft.leader();
            ctx.send(from, Message::SubmitRedirect { txid, leader });
            return;
        }
        if self.known.insert(txid) {
            env.received_at = ctx.now().as_millis();
            self.raft.propose(Command::Envelope(Box::new(env))).expect("leader accepts proposals");
        }
        ctx.send(from, Message::SubmitAck { txid });
    }
}

impl Process<Message, Event> for OrdererNode {
    fn on_start(&mut self, ctx: &mut Context<'_, Message, Event>) {
        self.arm_election(ctx);
        ctx.set_timer(Duration::from_millis(self.config.resend_ms), RESEND);
    }

    fn on_message(&mut self, ctx: &mut Context<'_, Message, Event>, from: NodeAddress, msg: Message) {
        match msg {
            Message::SubmitEnvelope(env) => {
                ctx.consume(self.config.cost.for_bytes(env.size()));
                self.on_submit(ctx, from, env);
            }
            Message::Raft(raft) if from.kind == NodeKind::Orderer => {
                if let super::RaftMessage::AppendEntries { entries, .. } = &raft {
                    if !entries.is_empty() {
                        ctx.consume(self.config.cost.for_bytes(crate::codec::encoded_len(entries)));
                    }
                }
                self.raft.handle(from.index, raft);
            }
            Message::BlockAck { next } if from.kind == NodeKind::Peer => {
                if let Some(p) = self.progress.get_mut(&from.index) {
                    p.next = Some(p.next.map_or(next, |n| n.max(next)));
                }
            }
            other => log::debug!("{}: ignoring {} from {from}", ctx.me(), other.kind()),
        }
        self.pump(ctx);
    }

    fn on_timer(&mut self, ctx: &mut Context<'_, Message, Event>, token: u64) {
        let value = token & !KIND_MASK;
        match token & KIND_MASK {
            ELECTION if value == self.election_gen => self.raft.election_timeout(),
            HEARTBEAT if value == self.heartbeat_gen && self.raft.is_leader() => {
                self.raft.heartbeat();
                self.arm_heartbeat(ctx);
            }
            CUT if self.raft.is_leader() => {
                if self.cut_armed == Some(value) {
                    self.cut_armed = None;
                }
                if value == self.cutter.next_number() && self.cutter.pending_len() > 0 {
                    let _ = self.raft.propose(Command::Cut { block_number: value });
                }
            }
            RESEND => {
                self.resend(ctx);
                ctx.set_timer(Duration::from_millis(self.config.resend_ms), RESEND);
            }
            _ => {}
        }
        self.pump(ctx);
    }

    fn on_crash(&mut self) {
        self.raft.crash();
        self.cutter = BlockCutter::new(self.config.cut);
        self.blocks.clear();
        self.cut_armed = None;
        self.known.clear();
        self.reset_progress();
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
