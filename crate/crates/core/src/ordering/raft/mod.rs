//! Raft consensus as a pure state machine.
//!
//! The orderer actor feeds it messages and timer expiries and carries out
//! the resulting [`Output`]s. Log indices are 1-based; index 0 is the empty
//! prefix with term 0.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Envelope;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    /// Appended by every new leader so earlier-term entries can commit.
    Noop,
    Envelope(Box<Envelope>),
    /// Batch timeout for the block with this number.
    Cut {
        block_number: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub term: u64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RaftMessage {
    RequestVote {
        term: u64,
        candidate: NodeId,
        last_log_index: u64,
        last_log_term: u64,
    },
    VoteResponse {
        term: u64,
        granted: bool,
    },
    AppendEntries {
        term: u64,
        leader: NodeId,
        prev_log_index: u64,
        prev_log_term: u64,
        entries: Vec<LogEntry>,
        leader_commit: u64,
    },
    /// `match_index` is the last index known to match on success, or a
    /// hint for where the leader should back up to on failure.
    AppendResponse {
        term: u64,
        success: bool,
        match_index: u64,
    },
}

impl RaftMessage {
    pub fn term(&self) -> u64 {
        match self {
            RaftMessage::RequestVote { term, .. }
            | RaftMessage::VoteResponse { term, .. }
            | RaftMessage::AppendEntries { term, .. }
            | RaftMessage::AppendResponse { term, .. } => *term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaftConfig {
    pub election_timeout_min_ms: u64,
    pub election_timeout_max_ms: u64,
    pub heartbeat_ms: u64,
    pub max_entries_per_append: usize,
}

impl Default for RaftConfig {
    fn default() -> Self {
        RaftConfig {
            election_timeout_min_ms: 150,
            election_timeout_max_ms: 300,
            heartbeat_ms: 50,
            max_entries_per_append: 8,
        }
    }
}

impl RaftConfig {
    pub fn heartbeat(&self) -> Duration {
        Duration::from_millis(self.heartbeat_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RaftRole {
    Follower,
    Candidate,
    Leader,
}

/// State that survives a crash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurableState {
    pub current_term: u64,
    pub voted_for: Option<NodeId>,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Send(NodeId, RaftMessage),
    ResetElectionTimer,
    BecameLeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ProposeError {
    #[error("not the leader; leader hint {0:?}")]
    NotLeader(Option<NodeId>),
}

#[derive(Debug, Clone)]
pub struct RaftNode {
    id: NodeId,
    members: Vec<NodeId>,
    max_batch: usize,
    durable: DurableState,
    role: RaftRole,
    leader: Option<NodeId>,
    commit_index: u64,
    last_applied: u64,
    votes: BTreeSet<NodeId>,
    next_index: BTreeMap<NodeId, u64>,
    match_index: BTreeMap<NodeId, u64>,
    out: Vec<Output>,
}

impl RaftNode {
    /// `members` lists every node in the cluster, including `id`.
    pub fn new(id: NodeId, members: Vec<NodeId>, config: &RaftConfig) -> Self {
        debug_assert!(members.contains(&id));
        RaftNode {
            id,
            members,
            max_batch: config.max_entries_per_append.max(1),
            durable: DurableState::default(),
            role: RaftRole::Follower,
            leader: None,
            commit_index: 0,
            last_applied: 0,
            votes: BTreeSet::new(),
            next_index: BTreeMap::new(),
            match_index: BTreeMap::new(),
            out: Vec::new(),
        }
    }

    /// Rebuilds a node from persisted state, as after a restart.
    pub fn restore(id: NodeId, members: Vec<NodeId>, config: &RaftConfig, durable: DurableState) -> Self {
        RaftNode { durable, ..Self::new(id, members, config) }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }
    pub fn role(&self) -> RaftRole {
        self.role
    }
    pub fn is_leader(&self) -> bool {
        self.role == RaftRole::Leader
    }
    pub fn leader(&self) -> Option<NodeId> {
        self.leader
    }
    pub fn term(&self) -> u64 {
        self.durable.current_term
    }
    pub fn voted_for(&self) -> Option<NodeId> {
        self.durable.voted_for
    }
    pub fn log(&self) -> &[LogEntry] {
        &self.durable.log
    }
    pub fn durable(&self) -> &DurableState {
        &self.durable
    }
    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }
    pub fn last_index(&self) -> u64 {
        self.durable.log.len() as u64
    }

    pub fn term_at(&self, index: u64) -> u64 {
        match index {
            0 => 0,
            i => self.durable.log.get(i as usize - 1).map_or(0, |e| e.term),
        }
    }

    fn last_term(&self) -> u64 {
        self.term_at(self.last_index())
    }

    fn majority(&self) -> usize {
        self.members.len() / 2 + 1
    }

    fn others(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members.iter().copied().filter(move |m| *m != self.id)
    }

    pub fn take_output(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }

    /// Entries committed since the last call, with their indices.
    pub fn take_committed(&mut self) -> Vec<(u64, LogEntry)> {
        let from = self.last_applied;
        self.last_applied = self.commit_index;
        (from + 1..=self.commit_index).map(|i| (i, self.durable.log[i as usize - 1].clone())).collect()
    }

    /// Forget volatile state; the durable part stays.
    pub fn crash(&mut self) {
        self.role = RaftRole::Follower;
        self.leader = None;
        self.commit_index = 0;
        self.last_applied = 0;
        self.votes.clear();
        self.next_index.clear();
        self.match_index.clear();
        self.out.clear();
    }

    pub fn election_timeout(&mut self) {
        if self.is_leader() {
            return;
        }
        self.durable.current_term += 1;
        self.durable.voted_for = Some(self.id);
        self.role = RaftRole::Candidate;
        self.leader = None;
        self.votes = BTreeSet::from([self.id]);
        self.out.push(Output::ResetElectionTimer);
        if self.votes.len() >= self.majority() {
            self.become_leader();
            return;
        }
        let msg = RaftMessage::RequestVote {
            term: self.term(),
            candidate: self.id,
            last_log_index: self.last_index(),
            last_log_term: self.last_term(),
        };
        let others: Vec<_> = self.others().collect();
        for m in others {
            self.out.push(Output::Send(m, msg.clone()));
        }
    }

    pub fn heartbeat(&mut self) {
        if !self.is_leader() {
            return;
        }
        let others: Vec<_> = self.others().collect();
        for m in others {
            self.send_append(m);
        }
    }

    pub fn propose(&mut self, command: Command) -> Result<u64, ProposeError> {
        if !self.is_leader() {
            return Err(ProposeError::NotLeader(self.leader));
        }
        self.durable.log.push(LogEntry { term: self.term(), command });
        let index = self.last_index();
        self.match_index.insert(self.id, index);
        let others: Vec<_> = self.others().collect();
        for m in others {
            // Only followers already caught up get the new entry straight
            // away; laggards keep being served by responses and heartbeats.
            if self.next_index.get(&m) == Some(&index) {
                self.send_append(m);
            }
        }
        self.advance_commit();
        Ok(index)
    }

    pub fn handle(&mut self, from: NodeId, msg: RaftMessage) {
        if msg.term() > self.term() {
            self.durable.current_term = msg.term();
            self.durable.voted_for = None;
            self.role = RaftRole::Follower;
            self.leader = None;
        }
        match msg {
            RaftMessage::RequestVote { term, candidate, last_log_index, last_log_term } => {
                let up_to_date = (last_log_term, last_log_index) >= (self.last_term(), self.last_index());
                let free = self.durable.voted_for.is_none_or(|v| v == candidate);
                let granted = term == self.term() && free && up_to_date;
                if granted {
                    self.durable.voted_for = Some(candidate);
                    self.out.push(Output::ResetElectionTimer);
                }
                self.out.push(Output::Send(from, RaftMessage::VoteResponse { term: self.term(), granted }));
            }
            RaftMessage::VoteResponse { term, granted } => {
                if self.role == RaftRole::Candidate && term == self.term() && granted {
                    self.votes.insert(from);
                    if self.votes.len() >= self.majority() {
                        self.become_leader();
                    }
                }
            }
            RaftMessage::AppendEntries { term, leader, prev_log_index, prev_log_term, entries, leader_commit } => {
                if term < self.term() {
                    self.reply_append(from, false, self.last_index());
                    return;
                }
                self.role = RaftRole::Follower;
                self.leader = Some(leader);
                self.out.push(Output::ResetElectionTimer);
                if prev_log_index > self.last_index() {
                    self.reply_append(from, false, self.last_index());
                    return;
                }
                if self.term_at(prev_log_index) != prev_log_term {
                    self.reply_append(from, false, prev_log_index - 1);
                    return;
                }
                let mut index = prev_log_index;
                for entry in entries {
                    index += 1;
                    if index <= self.last_index() {
                        if self.term_at(index) == entry.term {
                            continue;
                        }
                        self.durable.log.truncate(index as usize - 1);
                    }
                    self.durable.log.push(entry);
                }
                let new_commit = leader_commit.min(index);
                if new_commit > self.commit_index {
                    self.commit_index = new_commit;
                }
                self.reply_append(from, true, index);
            }
            RaftMessage::AppendResponse { term, success, match_index } => {
                if !self.is_leader() || term != self.term() {
                    return;
                }
                let matched = self.match_index.get(&from).copied().unwrap_or(0);
                if success {
                    let m = matched.max(match_index);
                    self.match_index.insert(from, m);
                    let next = self.next_index.get(&from).copied().unwrap_or(0).max(m + 1);
                    self.next_index.insert(from, next);
                    if next <= self.last_index() && m == match_index && m + 1 == next {
                        self.send_append(from);
                    }
                    self.advance_commit();
                } else {
                    let next = (match_index + 1).max(matched + 1);
                    let cur = self.next_index.get(&from).copied().unwrap_or(next);
                    self.next_index.insert(from, next.min(cur));
                    self.send_append(from);
                }
            }
        }
    }

    fn reply_append(&mut self, to: NodeId, success: bool, match_index: u64) {
        self.out.push(Output::Send(to, RaftMessage::AppendResponse { term: self.term(), success, match_index }));
    }

    fn become_leader(&mut self) {
        self.role = RaftRole::Leader;
        self.leader = Some(self.id);
        self.durable.log.push(LogEntry { term: self.term(), command: Command::Noop });
        let last = self.last_index();
        self.next_index = self.others().map(|m| (m, last)).collect();
        self.match_index = self.others().map(|m| (m, 0)).collect();
        self.match_index.insert(self.id, last);
        self.out.push(Output::BecameLeader);
        self.heartbeat();
        self.advance_commit();
    }

    /// Sends the next batch to `to` and optimistically assumes it arrives.
    fn send_append(&mut self, to: NodeId) {
        let next = self.next_index.get(&to).copied().unwrap_or(self.last_index() + 1).max(1);
        let prev = next - 1;
        let end = (prev as usize + self.max_batch).min(self.durable.log.len());
        let entries = self.durable.log[prev as usize..end].to_vec();
        self.next_index.insert(to, end as u64 + 1);
        self.out.push(Output::Send(
            to,
            RaftMessage::AppendEntries {
                term: self.term(),
                leader: self.id,
                prev_log_index: prev,
                prev_log_term: self.term_at(prev),
                entries,
                leader_commit: self.commit_index,
            },
        ));
    }

    fn advance_commit(&mut self) {
        let majority = self.majority();
        let mut n = self.last_index();
        while n > self.commit_index {
            if self.term_at(n) == self.term() {
                let replicated =
                    self.members.iter().filter(|m| self.match_index.get(m).copied().unwrap_or(0) >= n).count();
                if replicated >= majority {
                    self.commit_index = n;
                    return;
                }
            }
            n -= 1;
        }
    }
}

#[cfg(test)]
mod tests;
