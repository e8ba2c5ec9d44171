use std::collections::VecDeque;

use super::*;

fn cfg() -> RaftConfig {
    RaftConfig::default()
}

/// Lossless FIFO bus over a set of nodes; `blocked` nodes drop traffic.
struct Bus {
    nodes: Vec<RaftNode>,
    queue: VecDeque<(NodeId, NodeId, RaftMessage)>,
    blocked: Vec<NodeId>,
}

impl Bus {
    fn new(n: u32) -> Self {
        let members: Vec<_> = (0..n).collect();
        let nodes = members.iter().map(|i| RaftNode::new(*i, members.clone(), &cfg())).collect();
        Bus { nodes, queue: VecDeque::new(), blocked: Vec::new() }
    }

    fn collect(&mut self, i: NodeId) {
        for o in self.nodes[i as usize].take_output() {
            if let Output::Send(to, m) = o {
                self.queue.push_back((i, to, m));
            }
        }
    }

    fn settle(&mut self) {
        for i in 0..self.nodes.len() as u32 {
            self.collect(i);
        }
        while let Some((from, to, m)) = self.queue.pop_front() {
            if self.blocked.contains(&from) || self.blocked.contains(&to) {
                continue;
            }
            self.nodes[to as usize].handle(from, m);
            self.collect(to);
        }
    }

    fn leaders(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.is_leader()).map(|n| n.id()).collect()
    }
}

fn env_cmd(n: u64) -> Command {
    Command::Cut { block_number: n }
}

#[test]
fn one_timeout_elects_exactly_one_leader() {
    let mut bus = Bus::new(3);
    bus.nodes[1].election_timeout();
    bus.settle();
    assert_eq!(bus.leaders(), vec![1]);
    assert!(bus.nodes.iter().all(|n| n.term() == 1 && n.leader() == Some(1)));
    // The leader's no-op commits once replicated.
    assert!(bus.nodes.iter().all(|n| n.last_index() == 1));
    assert_eq!(bus.nodes[1].commit_index(), 1);
}

#[test]
fn single_node_cluster_leads_itself() {
    let mut n = RaftNode::new(0, vec![0], &cfg());
    n.election_timeout();
    assert!(n.is_leader());
    n.propose(env_cmd(0)).unwrap();
    assert_eq!(n.commit_index(), 2);
}

#[test]
fn commit_needs_two_of_three() {
    let mut bus = Bus::new(3);
    bus.nodes[0].election_timeout();
    bus.settle();
    bus.blocked = vec![2];
    let idx = bus.nodes[0].propose(env_cmd(7)).unwrap();
    assert_eq!(bus.nodes[0].commit_index(), idx - 1);
    bus.settle();
    assert_eq!(bus.nodes[0].commit_index(), idx);
    assert_eq!(bus.nodes[2].last_index(), 1);

    // With both followers gone nothing commits.
    bus.blocked = vec![1, 2];
    let idx2 = bus.nodes[0].propose(env_cmd(8)).unwrap();
    bus.settle();
    assert_eq!(bus.nodes[0].commit_index(), idx);
    bus.blocked.clear();
    bus.nodes[0].heartbeat();
    bus.settle();
    assert_eq!(bus.nodes[0].commit_index(), idx2);
    assert_eq!(bus.nodes[2].log(), bus.nodes[0].log());
}

#[test]
fn followers_redirect_proposals() {
    let mut bus = Bus::new(3);
    assert_eq!(bus.nodes[0].propose(Command::Noop), Err(ProposeError::NotLeader(None)));
    bus.nodes[2].election_timeout();
    bus.settle();
    assert_eq!(bus.nodes[0].propose(Command::Noop), Err(ProposeError::NotLeader(Some(2))));
}

fn entry(term: u64, block_number: u64) -> LogEntry {
    LogEntry { term, command: Command::Cut { block_number } }
}

#[test]
fn conflicting_suffix_is_replaced() {
    // Hand trace:
    //   leader (term 3):  [1:a 1:b 3:c]
    //   follower:         [1:a 1:b 2:x 2:y]
    // AE(prev=3, term 3) fails: term at 3 is 2 → hint 2.
    // Leader backs up to next=3, sends [3:c] with prev=2 (term 1): the
    // follower truncates x,y and appends c.
    let members = vec![0, 1, 2];
    let leader_log = [entry(1, 0), entry(1, 1), entry(3, 2)];
    let follower_log = vec![entry(1, 0), entry(1, 1), entry(2, 90), entry(2, 91)];
    let mut leader = RaftNode::restore(
        0,
        members.clone(),
        &cfg(),
        DurableState { current_term: 2, voted_for: None, log: leader_log[..2].to_vec() },
    );
    let mut follower = RaftNode::restore(
        1,
        members.clone(),
        &cfg(),
        DurableState { current_term: 2, voted_for: None, log: follower_log.clone() },
    );
    // Put the leader in term 3 by an election that node 2 grants.
    leader.election_timeout();
    leader.take_output();
    leader.handle(2, RaftMessage::VoteResponse { term: 3, granted: true });
    assert!(leader.is_leader());
    // become_leader appended the term-3 no-op; swap it for the traced entry.
    leader.durable.log.pop();
    leader.durable.log.push(entry(3, 2));
    assert_eq!(leader.log(), &leader_log[..]);
    leader.take_output();

    leader.next_index.insert(1, 4);
    leader.send_append(1);
    let mut rounds = 0;
    loop {
        rounds += 1;
        let out: Vec<_> = leader.take_output();
        let mut sent = false;
        for o in out {
            if let Output::Send(1, m) = o {
                sent = true;
                follower.handle(0, m);
                for r in follower.take_output() {
                    if let Output::Send(0, resp) = r {
                        leader.handle(1, resp);
                    }
                }
            }
        }
        if !sent || rounds > 10 {
            break;
        }
    }
    assert_eq!(follower.log(), &leader_log[..]);
    assert_eq!(follower.term(), 3);
    assert_eq!(leader.match_index[&1], 3);
    assert_eq!(leader.commit_index(), 3);
}

#[test]
fn stale_log_cannot_win_votes() {
    let members = vec![0, 1, 2];
    let long = DurableState { current_term: 2, voted_for: None, log: vec![entry(1, 0), entry(2, 1)] };
    let short = DurableState { current_term: 2, voted_for: None, log: vec![entry(1, 0)] };
    let mut voter = RaftNode::restore(0, members.clone(), &cfg(), long);
    let mut candidate = RaftNode::restore(1, members, &cfg(), short);
    candidate.election_timeout();
    for o in candidate.take_output() {
        if let Output::Send(0, m) = o {
            voter.handle(1, m);
        }
    }
    let out = voter.take_output();
    assert!(out.contains(&Output::Send(1, RaftMessage::VoteResponse { term: 3, granted: false })));
    assert_eq!(voter.term(), 3);
    assert_eq!(voter.voted_for(), None);
}

#[test]
fn one_vote_per_term() {
    let mut voter = RaftNode::new(0, vec![0, 1, 2], &cfg());
    let rv = |c| RaftMessage::RequestVote { term: 1, candidate: c, last_log_index: 0, last_log_term: 0 };
    voter.handle(1, rv(1));
    voter.handle(2, rv(2));
    voter.handle(1, rv(1));
    let grants: Vec<_> = voter
        .take_output()
        .into_iter()
        .filter_map(|o| match o {
            Output::Send(to, RaftMessage::VoteResponse { granted, .. }) => Some((to, granted)),
            _ => None,
        })
        .collect();
    assert_eq!(grants, vec![(1, true), (2, false), (1, true)]);
}

#[test]
fn leader_steps_down_on_higher_term() {
    let mut bus = Bus::new(3);
    bus.nodes[0].election_timeout();
    bus.settle();
    assert!(bus.nodes[0].is_leader());
    bus.nodes[0].handle(1, RaftMessage::AppendResponse { term: 9, success: false, match_index: 0 });
    assert_eq!(bus.nodes[0].role(), RaftRole::Follower);
    assert_eq!(bus.nodes[0].term(), 9);
}

#[test]
fn crash_keeps_durable_state_only() {
    let mut bus = Bus::new(3);
    bus.nodes[0].election_timeout();
    bus.settle();
    bus.nodes[0].propose(env_cmd(1)).unwrap();
    bus.settle();
    let durable = bus.nodes[1].durable().clone();
    bus.nodes[1].crash();
    assert_eq!(bus.nodes[1].durable(), &durable);
    assert_eq!(bus.nodes[1].commit_index(), 0);
    assert!(bus.nodes[1].take_committed().is_empty());
    bus.nodes[0].heartbeat();
    bus.settle();
    assert_eq!(bus.nodes[1].commit_index(), 2);
    assert_eq!(bus.nodes[1].take_committed().len(), 2);
}

#[test]
fn reordered_appends_do_not_truncate() {
    let mut bus = Bus::new(3);
    bus.nodes[0].election_timeout();
    bus.settle();
    bus.blocked = vec![2];
    for i in 0..3 {
        bus.nodes[0].propose(env_cmd(i)).unwrap();
    }
    bus.settle();
    // Replay an old, shorter AppendEntries at node 1: it must keep its log.
    let old = RaftMessage::AppendEntries {
        term: 1,
        leader: 0,
        prev_log_index: 1,
        prev_log_term: 1,
        entries: vec![bus.nodes[0].log()[1].clone()],
        leader_commit: 1,
    };
    let before = bus.nodes[1].log().to_vec();
    bus.nodes[1].handle(0, old);
    assert_eq!(bus.nodes[1].log(), &before[..]);
}
