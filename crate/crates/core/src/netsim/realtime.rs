use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    node_seed, pair, Context, Finished, LinkModel, NetStats, NodeAddress, Process, Runtime, SimError, SimTime, Timed,
    WireMessage,
};

type BoxedProcess<M, E> = Box<dyn Process<M, E>>;
type Handler<'a, M, E> = dyn FnMut(&mut BoxedProcess<M, E>, &mut Context<'_, M, E>) + 'a;

enum Input<M> {
    Deliver { from: NodeAddress, msg: M },
    Timer { token: u64, epoch: u64 },
    Crash,
    Restart,
    Stop,
}

struct Pending<M> {
    at: Instant,
    seq: u64,
    target: NodeAddress,
    input: Input<M>,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<M> Eq for Pending<M> {}
impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Pending<M> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Router<M> {
    queue: BinaryHeap<Pending<M>>,
    seq: u64,
    rng: ChaCha8Rng,
    link: LinkModel,
    partitions: BTreeSet<(NodeAddress, NodeAddress)>,
    crashed: BTreeSet<NodeAddress>,
    stats: NetStats,
    shutdown: bool,
}

struct Shared<M, E> {
    router: Mutex<Router<M>>,
    wakeup: Condvar,
    events: Mutex<Vec<Timed<E>>>,
    inboxes: BTreeMap<NodeAddress, Sender<Input<M>>>,
    start: Instant,
}

impl<M, E> Shared<M, E> {
    fn now(&self) -> SimTime {
        SimTime(self.start.elapsed().as_micros() as u64)
    }

    fn push(&self, router: &mut Router<M>, at: Instant, target: NodeAddress, input: Input<M>) {
        router.seq += 1;
        let seq = router.seq;
        router.queue.push(Pending { at, seq, target, input });
    }
}

/// Wall-clock runtime: one OS thread per node plus a delivery thread.
///
/// Not deterministic. Latency is realised by holding messages until their
/// due instant; service time by sleeping in the node thread.
pub struct RealtimeNetwork<M, E> {
    shared: Arc<Shared<M, E>>,
    nodes: Vec<(NodeAddress, JoinHandle<BoxedProcess<M, E>>)>,
    dispatcher: Option<JoinHandle<()>>,
}

impl<M: WireMessage, E: Send + 'static> RealtimeNetwork<M, E> {
    /// Starts every node immediately.
    pub fn start(
        seed: u64,
        link: LinkModel,
        processes: Vec<(NodeAddress, BoxedProcess<M, E>)>,
    ) -> Result<Self, SimError> {
        link.validate()?;
        let mut inboxes = BTreeMap::new();
        let mut receivers = Vec::new();
        for (addr, process) in processes {
            let (tx, rx) = unbounded();
            inboxes.insert(addr, tx);
            receivers.push((addr, process, rx));
        }
        let shared = Arc::new(Shared {
            router: Mutex::new(Router {
                queue: BinaryHeap::new(),
                seq: 0,
                rng: ChaCha8Rng::seed_from_u64(seed),
                link,
                partitions: BTreeSet::new(),
                crashed: BTreeSet::new(),
                stats: NetStats::default(),
                shutdown: false,
            }),
            wakeup: Condvar::new(),
            events: Mutex::new(Vec::new()),
            inboxes,
            start: Instant::now(),
        });
        let dispatcher = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("netsim-dispatch".into())
                .spawn(move || dispatch_loop(&shared))
                .expect("spawn dispatcher")
        };
        let nodes = receivers
            .into_iter()
            .map(|(addr, process, rx)| {
                let shared = Arc::clone(&shared);
                let rng = ChaCha8Rng::seed_from_u64(node_seed(seed, addr));
                let handle = thread::Builder::new()
                    .name(addr.to_string())
                    .spawn(move || node_loop(&shared, addr, process, rx, rng))
                    .expect("spawn node thread");
                (addr, handle)
            })
            .collect();
        Ok(RealtimeNetwork { shared, nodes, dispatcher: Some(dispatcher) })
    }

    pub fn now(&self) -> SimTime {
        self.shared.now()
    }

    pub fn stats(&self) -> NetStats {
        self.shared.router.lock().expect("router lock").stats
    }

    pub fn events_snapshot(&self) -> Vec<Timed<E>>
    where
        E: Clone,
    {
        self.shared.events.lock().expect("events lock").clone()
    }

    fn control(&self, addr: NodeAddress, input: Input<M>) -> Result<(), SimError> {
        let inbox = self.shared.inboxes.get(&addr).ok_or(SimError::UnknownAddress(addr))?;
        {
            let mut r = self.shared.router.lock().expect("router lock");
            match input {
                Input::Crash => {
                    r.crashed.insert(addr);
                }
                Input::Restart => {
                    r.crashed.remove(&addr);
                }
                _ => {}
            }
        }
        let _ = inbox.send(input);
        Ok(())
    }

    fn stop(&mut self) -> BTreeMap<NodeAddress, BoxedProcess<M, E>> {
        {
            let mut r = self.shared.router.lock().expect("router lock");
            r.shutdown = true;
            self.shared.wakeup.notify_all();
        }
        if let Some(d) = self.dispatcher.take() {
            let _ = d.join();
        }
        for tx in self.shared.inboxes.values() {
            let _ = tx.send(Input::Stop);
        }
        self.nodes.drain(..).map(|(addr, h)| (addr, h.join().expect("node thread panicked"))).collect()
    }
}

impl<M: WireMessage, E: Send + 'static> Runtime<M, E> for RealtimeNetwork<M, E> {
    fn now(&self) -> SimTime {
        self.shared.now()
    }

    fn run_until_events(
        &mut self,
        cond: &mut dyn FnMut(&[Timed<E>]) -> bool,
        timeout: Duration,
    ) -> Result<Duration, SimError> {
        let start = Instant::now();
        loop {
            if cond(&self.shared.events.lock().expect("events lock")) {
                return Ok(start.elapsed());
            }
            if start.elapsed() >= timeout {
                return Err(SimError::DeadlineExceeded { elapsed: start.elapsed() });
            }
            thread::sleep(Duration::from_millis(1));
        }
    }

    fn crash(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        self.control(addr, Input::Crash)
    }

    fn restart(&mut self, addr: NodeAddress) -> Result<(), SimError> {
        self.control(addr, Input::Restart)
    }

    fn partition(&mut self, a: &[NodeAddress], b: &[NodeAddress]) {
        let mut r = self.shared.router.lock().expect("router lock");
        for x in a {
            for y in b {
                if x != y {
                    r.partitions.insert(pair(*x, *y));
                }
            }
        }
    }

    fn heal_all(&mut self) {
        self.shared.router.lock().expect("router lock").partitions.clear();
    }

    fn finish(mut self: Box<Self>) -> Finished<M, E> {
        let elapsed = self.shared.start.elapsed();
        let nodes = self.stop();
        let events = std::mem::take(&mut *self.shared.events.lock().expect("events lock"));
        let stats = self.stats();
        Finished { nodes, events, stats, elapsed }
    }
}

impl<M, E> Drop for RealtimeNetwork<M, E> {
    fn drop(&mut self) {
        if let Ok(mut r) = self.shared.router.lock() {
            r.shutdown = true;
        }
        self.shared.wakeup.notify_all();
        for tx in self.shared.inboxes.values() {
            let _ = tx.send(Input::Stop);
        }
    }
}

fn dispatch_loop<M: WireMessage, E>(shared: &Shared<M, E>) {
    let mut r = shared.router.lock().expect("router lock");
    loop {
        if r.shutdown {
            return;
        }
        let now = Instant::now();
        match r.queue.peek().map(|p| p.at) {
            Some(at) if at <= now => {
                let p = r.queue.pop().expect("peeked");
                if matches!(p.input, Input::Deliver { .. }) {
                    if r.crashed.contains(&p.target) {
                        r.stats.dropped_crashed += 1;
                        continue;
                    }
                    r.stats.delivered += 1;
                }
                if let Some(tx) = shared.inboxes.get(&p.target) {
                    let _ = tx.send(p.input);
                }
            }
            Some(at) => {
                r = shared.wakeup.wait_timeout(r, at - now).expect("router lock").0;
            }
            None => {
                r = shared.wakeup.wait(r).expect("router lock");
            }
        }
    }
}

fn node_loop<M: WireMessage, E: Send + 'static>(
    shared: &Shared<M, E>,
    me: NodeAddress,
    mut process: BoxedProcess<M, E>,
    rx: Receiver<Input<M>>,
    mut rng: ChaCha8Rng,
) -> BoxedProcess<M, E> {
    let mut epoch = 0u64;
    let mut crashed = false;
    let mut handle = |process: &mut BoxedProcess<M, E>, epoch: u64, f: &mut Handler<'_, M, E>| {
        let started = Instant::now();
        let mut sends = Vec::new();
        let mut timers = Vec::new();
        let mut emitted = Vec::new();
        let now = shared.now();
        let mut ctx = Context {
            now,
            me,
            sends: &mut sends,
            timers: &mut timers,
            events: &mut emitted,
            busy: Duration::ZERO,
            rng: &mut rng,
        };
        f(process, &mut ctx);
        let busy = ctx.busy;
        if !emitted.is_empty() {
            let mut ev = shared.events.lock().expect("events lock");
            ev.extend(emitted.into_iter().map(|event| Timed { at: now, node: me, event }));
        }
        let remaining = busy.saturating_sub(started.elapsed());
        if !remaining.is_zero() {
            thread::sleep(remaining);
        }
        if sends.is_empty() && timers.is_empty() {
            return;
        }
        let depart = Instant::now();
        let mut r = shared.router.lock().expect("router lock");
        for (after, token) in timers {
            shared.push(&mut r, started + after, me, Input::Timer { token, epoch });
        }
        for (to, msg) in sends {
            r.stats.sent += 1;
            if !shared.inboxes.contains_key(&to) || r.partitions.contains(&pair(me, to)) {
                r.stats.dropped_partition += 1;
                continue;
            }
            let link = r.link;
            match link.sample(&mut r.rng) {
                None => r.stats.dropped_loss += 1,
                Some(lat) => shared.push(&mut r, depart + lat, to, Input::Deliver { from: me, msg }),
            }
        }
        shared.wakeup.notify_all();
    };

    handle(&mut process, epoch, &mut |p, ctx| p.on_start(ctx));
    while let Ok(input) = rx.recv() {
        match input {
            Input::Stop => break,
            Input::Crash => {
                if !crashed {
                    crashed = true;
                    epoch += 1;
                    process.on_crash();
                }
            }
            Input::Restart => {
                if crashed {
                    crashed = false;
                    handle(&mut process, epoch, &mut |p, ctx| p.on_restart(ctx));
                }
            }
            Input::Deliver { .. } if crashed => {}
            Input::Deliver { from, msg } => {
                let mut msg = Some(msg);
                handle(&mut process, epoch, &mut |p, ctx| p.on_message(ctx, from, msg.take().expect("delivered once")));
            }
            Input::Timer { token, epoch: e } => {
                if !crashed && e == epoch {
                    handle(&mut process, epoch, &mut |p, ctx| p.on_timer(ctx, token));
                }
            }
        }
    }
    process
}
