use std::any::Any;
use std::time::Duration;

use rand::Rng;

use super::*;

#[derive(Debug, Clone, PartialEq)]
enum Msg {
    Ping(u32),
    Pong(u32),
}

impl WireMessage for Msg {
    fn kind(&self) -> &'static str {
        match self {
            Msg::Ping(_) => "ping",
            Msg::Pong(_) => "pong",
        }
    }
    fn wire_len(&self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ev {
    Got(u32, SimTime),
    Fired(u64),
}

/// Replies to pings; optionally busy for `cost` per message.
struct Echo {
    cost: Duration,
    seen: Vec<u32>,
}

impl Process<Msg, Ev> for Echo {
    fn on_message(&mut self, ctx: &mut Context<'_, Msg, Ev>, from: NodeAddress, msg: Msg) {
        ctx.consume(self.cost);
        match msg {
            Msg::Ping(n) => {
                self.seen.push(n);
                ctx.send(from, Msg::Pong(n));
            }
            Msg::Pong(n) => ctx.emit(Ev::Got(n, ctx.now())),
        }
    }
    fn on_timer(&mut self, ctx: &mut Context<'_, Msg, Ev>, token: u64) {
        ctx.emit(Ev::Fired(token));
    }
    fn on_crash(&mut self) {
        self.seen.clear();
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Sends `count` pings to `to` on start, randomised ids.
struct Pinger {
    to: NodeAddress,
    count: u32,
}

impl Process<Msg, Ev> for Pinger {
    fn on_start(&mut self, ctx: &mut Context<'_, Msg, Ev>) {
        for i in 0..self.count {
            let jitter: u32 = ctx.rng().gen_range(0..1000);
            ctx.send(self.to, Msg::Ping(i * 1000 + jitter));
        }
    }
    fn on_message(&mut self, ctx: &mut Context<'_, Msg, Ev>, _from: NodeAddress, msg: Msg) {
        if let Msg::Pong(n) = msg {
            ctx.emit(Ev::Got(n, ctx.now()));
        }
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

const A: NodeAddress = NodeAddress::vehicle(0);
const B: NodeAddress = NodeAddress::peer(0);

fn echo(cost_us: u64) -> Box<Echo> {
    Box::new(Echo { cost: Duration::from_micros(cost_us), seen: Vec::new() })
}

fn pair_sim(seed: u64, link: LinkModel, count: u32, cost_us: u64) -> Simulation<Msg, Ev> {
    let mut sim = Simulation::new(seed, link).unwrap();
    sim.add_node(B, echo(cost_us));
    sim.add_node(A, Box::new(Pinger { to: B, count }));
    sim
}

#[test]
fn round_trip_respects_latency_bounds() {
    let link = LinkModel { base_latency_ms: 5.0, jitter_ms: 2.0, loss_rate: 0.0 };
    let mut sim = pair_sim(3, link, 200, 0);
    sim.run_for(Duration::from_secs(1));
    assert_eq!(sim.events().len(), 200);
    for e in sim.events() {
        let Ev::Got(_, at) = e.event else { panic!() };
        assert!(at >= SimTime::from_millis(6) && at <= SimTime::from_millis(14), "{at}");
    }
    assert_eq!(sim.stats().sent, 400);
    assert_eq!(sim.stats().delivered, 400);
}

#[test]
fn loss_rate_is_statistically_honoured() {
    let link = LinkModel { base_latency_ms: 1.0, jitter_ms: 0.0, loss_rate: 0.1 };
    let mut sim = Simulation::<Msg, Ev>::new(11, link).unwrap();
    sim.add_node(B, echo(0));
    sim.add_node(A, Box::new(Echo { cost: Duration::ZERO, seen: Vec::new() }));
    for i in 0..10_000 {
        sim.inject(A, B, Msg::Ping(i)).unwrap();
    }
    // Pings only; drop the pong leg from the count.
    sim.set_link(LinkModel { loss_rate: 0.0, ..link }).unwrap();
    sim.run_for(Duration::from_secs(1));
    let got = sim.node::<Echo>(B).unwrap().seen.len() as f64;
    let lost = 1.0 - got / 10_000.0;
    assert!((lost - 0.1).abs() <= 0.02, "observed loss {lost}");
}

#[test]
fn same_seed_same_trace() {
    let link = LinkModel::default();
    let run = |seed| {
        let mut sim = pair_sim(seed, link, 50, 300);
        sim.run_for(Duration::from_secs(1));
        (sim.trace_hash(), sim.events().to_vec())
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5).0, run(6).0);
}

#[test]
fn partitions_drop_and_heal() {
    let mut sim = pair_sim(1, LinkModel::zero(), 0, 0);
    sim.run_for(Duration::from_millis(1));
    sim.partition(&[A], &[B]);
    sim.inject(A, B, Msg::Ping(1)).unwrap();
    sim.run_for(Duration::from_millis(10));
    assert!(sim.node::<Echo>(B).unwrap().seen.is_empty());
    assert_eq!(sim.stats().dropped_partition, 1);
    sim.heal_all();
    sim.inject(A, B, Msg::Ping(2)).unwrap();
    sim.run_for(Duration::from_millis(10));
    assert_eq!(sim.node::<Echo>(B).unwrap().seen, vec![2]);
}

#[test]
fn crash_drops_messages_and_cancels_timers() {
    struct Timed3;
    impl Process<Msg, Ev> for Timed3 {
        fn on_start(&mut self, ctx: &mut Context<'_, Msg, Ev>) {
            ctx.set_timer(Duration::from_millis(10), 7);
        }
        fn on_message(&mut self, _: &mut Context<'_, Msg, Ev>, _: NodeAddress, _: Msg) {}
        fn on_timer(&mut self, ctx: &mut Context<'_, Msg, Ev>, token: u64) {
            ctx.emit(Ev::Fired(token));
        }
        fn as_any(&self) -> &dyn Any {
            self
        }
    }
    let mut sim = Simulation::<Msg, Ev>::new(1, LinkModel::zero()).unwrap();
    sim.add_node(B, Box::new(Timed3));
    sim.add_node(A, echo(0));
    sim.crash_at(SimTime::from_millis(5), B).unwrap();
    sim.restart_at(SimTime::from_millis(20), B).unwrap();
    sim.run_for(Duration::from_millis(15));
    assert!(sim.is_crashed(B));
    sim.inject(A, B, Msg::Ping(1)).unwrap();
    sim.run_for(Duration::from_millis(100));
    // The pre-crash timer never fires; the restarted node arms a fresh one.
    let fired: Vec<_> = sim.events().iter().map(|e| (e.at, e.event.clone())).collect();
    assert_eq!(fired, vec![(SimTime::from_millis(30), Ev::Fired(7))]);
    assert_eq!(sim.stats().dropped_crashed, 1);
}

#[test]
fn busy_node_serialises_work_in_arrival_order() {
    let mut sim = Simulation::<Msg, Ev>::new(1, LinkModel::zero()).unwrap();
    sim.add_node(B, echo(1000));
    sim.add_node(A, Box::new(Pinger { to: B, count: 5 }));
    sim.run_for(Duration::from_millis(50));
    let times: Vec<_> = sim
        .events()
        .iter()
        .map(|e| match e.event {
            Ev::Got(_, at) => at,
            _ => unreachable!(),
        })
        .collect();
    let expected: Vec<_> = (1..=5).map(SimTime::from_millis).collect();
    assert_eq!(times, expected);
    let seen = &sim.node::<Echo>(B).unwrap().seen;
    assert!(seen.windows(2).all(|w| w[0] / 1000 < w[1] / 1000));
}

#[test]
fn run_until_reports_deadline() {
    let mut sim = pair_sim(1, LinkModel::default(), 1, 0);
    let ok = sim.run_until(|s| !s.events().is_empty(), Duration::from_secs(1));
    assert!(ok.is_ok());
    let err = sim.run_until(|s| s.events().len() > 1, Duration::from_millis(100));
    assert!(matches!(err, Err(SimError::DeadlineExceeded { .. })));
}

#[test]
fn realtime_runtime_delivers() {
    let link = LinkModel { base_latency_ms: 1.0, jitter_ms: 0.5, loss_rate: 0.0 };
    let procs: Vec<(NodeAddress, Box<dyn Process<Msg, Ev>>)> =
        vec![(B, echo(100)), (A, Box::new(Pinger { to: B, count: 20 }))];
    let mut rt: Box<dyn Runtime<Msg, Ev>> = Box::new(RealtimeNetwork::start(1, link, procs).unwrap());
    rt.run_until_events(&mut |e| e.len() == 20, Duration::from_secs(5)).unwrap();
    let done = rt.finish();
    assert_eq!(done.events.len(), 20);
    assert_eq!(done.node::<Echo>(B).unwrap().seen.len(), 20);
    assert_eq!(done.stats.delivered, 40);
}
