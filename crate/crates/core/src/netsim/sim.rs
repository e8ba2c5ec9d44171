use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    node_seed, pair, Context, Finished, LinkModel, NetStats, NodeAddress, Process, Runtime, SimError, SimTime, Timed,
    WireMessage,
};
use crate::ledger::Hash;

enum Item<M> {
    Start,
    Deliver { from: NodeAddress, msg: M },
    Timer { token: u64, epoch: u64 },
    Wake,
    Crash,
    Restart,
    Partition(Vec<NodeAddress>, Vec<NodeAddress>),
    HealAll,
}

struct Scheduled<M> {
    at: SimTime,
    seq: u64,
    target: NodeAddress,
    item: Item<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<M> Eq for Scheduled<M> {}
impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Scheduled<M> {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Slot<M, E> {
    process: Box<dyn Process<M, E>>,
    crashed: bool,
    epoch: u64,
    busy_until: SimTime,
    deferred: VecDeque<Scheduled<M>>,
    wake_pending: bool,
    rng: ChaCha8Rng,
}

/// Deterministic discrete-event runtime.
pub struct Simulation<M, E> {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled<M>>,
    nodes: BTreeMap<NodeAddress, Slot<M, E>>,
    link: LinkModel,
    net_rng: ChaCha8Rng,
    seed: u64,
    partitions: BTreeSet<(NodeAddress, NodeAddress)>,
    events: Vec<Timed<E>>,
    stats: NetStats,
    trace: Sha256,
    steps: u64,
}

impl<M: WireMessage, E: Send + 'static> Simulation<M, E> {
    pub fn new(seed: u64, link: LinkModel) -> Result<Self, SimError> {
        link.validate()?;
        Ok(Simulation {
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            link,
            net_rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            partitions: BTreeSet::new(),
            events: Vec::new(),
            stats: NetStats::default(),
            trace: Sha256::new(),
            steps: 0,
        })
    }

    /// Registers a node; its `on_start` runs at the current time.
    pub fn add_node(&mut self, addr: NodeAddress, process: Box<dyn Process<M, E>>) {
        self.nodes.insert(
            addr,
            Slot {
                process,
                crashed: false,
                epoch: 0,
                busy_until: self.now,
                deferred: VecDeque::new(),
                wake_pending: false,
                rng: ChaCha8Rng::seed_from_u64(node_seed(self.seed, addr)),
            },
        );
        self.schedule(self.now, addr, Item::Start);
    }

    pub fn addresses(&self) -> Vec<NodeAddress> {
        self.nodes.keys().copied().collect()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn events(&self) -> &[Timed<E>] {
        &self.events
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn set_link(&mut self, link: LinkModel) -> Result<(), SimError> {
        link.validate()?;
        self.link = link;
        Ok(())
    }

    pub fn node<T: 'static>(&self, addr: NodeAddress) -> Option<&T> {
        self.nodes.get(&addr)?.process.as_any().downcast_ref()
    }

    pub fn is_crashed(&self, addr: NodeAddress) -> bool {
        self.nodes.get(&addr).is_some_and(|s| s.crashed)
    }

    /// Digest over every processed input and drop, in order.
    pub fn trace_hash(&self) -> Hash {
        Hash(self.trace.clone().finalize().into())
    }

    pub fn partition(&mut self, a: &[NodeAddress], b: &[NodeAddress]) {
        for x in a {
            for y in b {
                if x != y {
                    self.partitions.insert(pair(*x, *y));
                }
            }
        }
    }

    pub fn heal(&mut self, a: &[NodeAddress], b: &[NodeAddress]) {
        for x in a {
            for y in b {
                self.partitions.remove(&pair(*x, *y));
            }
        }
    }

    pub fn heal_all(&mut self) {
        self.partitions.clear();
    }

    /// Schedules a crash at an absolute time.
    pub fn crash_at(&mut self, at: SimTime, addr: NodeAddress) -> Result<(), SimError> {
        self.check(addr)?;
        self.schedule(at.max(self.now), addr, Item::Crash);
        Ok(())
    }

    pub fn restart_at(&mut self, at: SimTime, addr: NodeAddress) -> Result<(), SimError> {
        self.check(addr)?;
        self.schedule(at.max(self.now), addr, Item::Restart);
        Ok(())
    }

    pub fn partition_at(&mut self, at: SimTime, a: Vec<NodeAddress>, b: Vec<NodeAddress>) {
        let anchor = self.nodes.keys().next().copied().unwrap_or(NodeAddress::peer(0));
        self.schedule(at.max(self.now), anchor, Item::Partition(a, b));
    }

    pub fn heal_all_at(&mut self, at: SimTime) {
        let anchor = self.nodes.keys().next().copied().unwrap_or(NodeAddress::peer(0));
        self.schedule(at.max(self.now), anchor, Item::HealAll);
    }

    pub fn crash(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        self.check(addr)?;
        self.do_crash(addr);
        Ok(())
    }

    pub fn restart(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        self.check(addr)?;
        self.do_restart(addr);
        Ok(())
    }

    /// Injects a message as if `from` had sent it just now.
    pub fn inject(&mut self, from: NodeAddress, to: NodeAddress, msg: M) -> Result<(), SimError> {
        self.check(to)?;
        self.transmit(self.now, from, to, msg);
        Ok(())
    }

    /// Processes one queued input. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(ev) = self.queue.pop() else {
            return false;
        };
        self.now = ev.at;
        self.steps += 1;
        let target = ev.target;
        match ev.item {
            Item::Crash => {
                self.do_crash(target);
                return true;
            }
            Item::Restart => {
                self.do_restart(target);
                return true;
            }
            Item::Partition(a, b) => {
                self.partition(&a, &b);
                return true;
            }
            Item::HealAll => {
                self.heal_all();
                return true;
            }
            _ => {}
        }
        let Some(slot) = self.nodes.get_mut(&target) else {
            return true;
        };
        if slot.crashed {
            if let Item::Deliver { from, msg } = &ev.item {
                self.stats.dropped_crashed += 1;
                self.record(b'x', *from, target, msg.kind(), msg.wire_len());
            }
            return true;
        }
        match ev.item {
            Item::Timer { epoch, .. } if epoch != slot.epoch => true,
            Item::Wake => {
                slot.wake_pending = false;
                self.drain(target);
                true
            }
            _ if slot.busy_until > self.now || !slot.deferred.is_empty() => {
                slot.deferred.push_back(ev);
                self.ensure_wake(target);
                true
            }
            item => {
                self.dispatch(target, item);
                true
            }
        }
    }

    /// Runs until `cond` holds or `timeout` of virtual time has elapsed.
    pub fn run_until(&mut self, mut cond: impl FnMut(&Self) -> bool, timeout: Duration) -> Result<Duration, SimError> {
        let start = self.now;
        let deadline = start.after(timeout);
        loop {
            if cond(self) {
                return Ok(self.now.saturating_sub(start));
            }
            match self.queue.peek() {
                Some(next) if next.at <= deadline => {
                    self.step();
                }
                _ => {
                    self.now = self.now.max(deadline);
                    return Err(SimError::DeadlineExceeded { elapsed: timeout });
                }
            }
        }
    }

    /// Processes everything due within the next `d`.
    pub fn run_for(&mut self, d: Duration) {
        let deadline = self.now.after(d);
        while self.queue.peek().is_some_and(|n| n.at <= deadline) {
            self.step();
        }
        self.now = self.now.max(deadline);
    }

    pub fn into_finished(self) -> Finished<M, E> {
        let elapsed = Duration::from_micros(self.now.0);
        Finished {
            nodes: self.nodes.into_iter().map(|(a, s)| (a, s.process)).collect(),
            events: self.events,
            stats: self.stats,
            elapsed,
        }
    }

    fn check(&self, addr: NodeAddress) -> Result<(), SimError> {
        if self.nodes.contains_key(&addr) {
            Ok(())
        } else {
            Err(SimError::UnknownAddress(addr))
        }
    }

    fn schedule(&mut self, at: SimTime, target: NodeAddress, item: Item<M>) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, target, item });
    }

    fn ensure_wake(&mut self, target: NodeAddress) {
        let slot = self.nodes.get_mut(&target).expect("known node");
        if !slot.wake_pending {
            slot.wake_pending = true;
            let at = slot.busy_until.max(self.now);
            self.schedule(at, target, Item::Wake);
        }
    }

    fn drain(&mut self, target: NodeAddress) {
        loop {
            let slot = self.nodes.get_mut(&target).expect("known node");
            if slot.crashed {
                return;
            }
            if slot.busy_until > self.now {
                if !slot.deferred.is_empty() {
                    self.ensure_wake(target);
                }
                return;
            }
            let Some(ev) = slot.deferred.pop_front() else {
                return;
            };
            match ev.item {
                Item::Timer { epoch, .. } if epoch != slot.epoch => {}
                item => self.dispatch(target, item),
            }
        }
    }

    fn dispatch(&mut self, target: NodeAddress, item: Item<M>) {
        let mut sends = Vec::new();
        let mut timers = Vec::new();
        let mut emitted = Vec::new();
        let now = self.now;
        let slot = self.nodes.get_mut(&target).expect("known node");
        let mut ctx = Context {
            now,
            me: target,
            sends: &mut sends,
            timers: &mut timers,
            events: &mut emitted,
            busy: Duration::ZERO,
            rng: &mut slot.rng,
        };
        let (tag, from, kind, len) = match item {
            Item::Start => {
                slot.process.on_start(&mut ctx);
                (b's', target, "start", 0)
            }
            Item::Restart => {
                slot.process.on_restart(&mut ctx);
                (b'r', target, "restart", 0)
            }
            Item::Deliver { from, msg } => {
                let (kind, len) = (msg.kind(), msg.wire_len());
                slot.process.on_message(&mut ctx, from, msg);
                (b'm', from, kind, len)
            }
            Item::Timer { token, .. } => {
                slot.process.on_timer(&mut ctx, token);
                (b't', target, "timer", token as usize)
            }
            Item::Wake | Item::Crash | Item::Partition(..) | Item::HealAll => {
                unreachable!("handled by the scheduler")
            }
        };
        let busy = ctx.busy;
        let epoch = slot.epoch;
        let depart = now.after(busy);
        slot.busy_until = depart;
        if tag == b'm' {
            self.stats.delivered += 1;
        }
        self.record(tag, from, target, kind, len);
        for event in emitted {
            self.events.push(Timed { at: now, node: target, event });
        }
        for (after, token) in timers {
            self.schedule(now.after(after), target, Item::Timer { token, epoch });
        }
        for (to, msg) in sends {
            self.transmit(depart, target, to, msg);
        }
        if busy > Duration::ZERO && !self.nodes[&target].deferred.is_empty() {
            self.ensure_wake(target);
        }
    }

    fn transmit(&mut self, depart: SimTime, from: NodeAddress, to: NodeAddress, msg: M) {
        self.stats.sent += 1;
        if !self.nodes.contains_key(&to) || self.partitions.contains(&pair(from, to)) {
            self.stats.dropped_partition += 1;
            self.record(b'p', from, to, msg.kind(), msg.wire_len());
            return;
        }
        match self.link.sample(&mut self.net_rng) {
            None => {
                self.stats.dropped_loss += 1;
                self.record(b'l', from, to, msg.kind(), msg.wire_len());
            }
            Some(latency) => self.schedule(depart.after(latency), to, Item::Deliver { from, msg }),
        }
    }

    fn do_crash(&mut self, addr: NodeAddress) {
        let now = self.now;
        let Some(slot) = self.nodes.get_mut(&addr) else {
            return;
        };
        if slot.crashed {
            return;
        }
        slot.crashed = true;
        slot.epoch += 1;
        slot.busy_until = now;
        self.stats.dropped_crashed +=
            slot.deferred.iter().filter(|e| matches!(e.item, Item::Deliver { .. })).count() as u64;
        slot.deferred.clear();
        slot.process.on_crash();
        self.record(b'c', addr, addr, "crash", 0);
    }

    fn do_restart(&mut self, addr: NodeAddress) {
        let now = self.now;
        let Some(slot) = self.nodes.get_mut(&addr) else {
            return;
        };
        if !slot.crashed {
            return;
        }
        slot.crashed = false;
        slot.busy_until = now;
        self.dispatch(addr, Item::Restart);
    }

    fn record(&mut self, tag: u8, from: NodeAddress, to: NodeAddress, kind: &str, len: usize) {
        let t = &mut self.trace;
        t.update(self.now.0.to_be_bytes());
        t.update([tag]);
        for a in [from, to] {
            t.update([a.kind as u8]);
            t.update(a.index.to_be_bytes());
        }
        t.update(kind.as_bytes());
        t.update((len as u64).to_be_bytes());
    }
}

impl<M: WireMessage, E: Send + 'static> Runtime<M, E> for Simulation<M, E> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn run_until_events(
        &mut self,
        cond: &mut dyn FnMut(&[Timed<E>]) -> bool,
        timeout: Duration,
    ) -> Result<Duration, SimError> {
        self.run_until(|s| cond(&s.events), timeout)
    }

    fn crash(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        Simulation::crash(self, addr)
    }

    fn restart(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        Simulation::restart(self, addr)
    }

    fn partition(&mut self, a: &[NodeAddress], b: &[NodeAddress]) {
        Simulation::partition(self, a, b)
    }

    fn heal_all(&mut self) {
        Simulation::heal_all(self)
    }

    fn finish(self: Box<Self>) -> Finished<M, E> {
        self.into_finished()
    }
}
