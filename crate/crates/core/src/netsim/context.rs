use std::any::Any;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;

use super::{NodeAddress, SimTime};

/// Handle passed to a node while it processes one input.
///
/// Sends and timers are buffered; sends leave the node once the service
/// time accumulated through [`Context::consume`] has elapsed.
pub struct Context<'a, M, E> {
    pub(crate) now: SimTime,
    pub(crate) me: NodeAddress,
    pub(crate) sends: &'a mut Vec<(NodeAddress, M)>,
    pub(crate) timers: &'a mut Vec<(Duration, u64)>,
    pub(crate) events: &'a mut Vec<E>,
    pub(crate) busy: Duration,
    pub(crate) rng: &'a mut ChaCha8Rng,
}

impl<'a, M: Clone, E> Context<'a, M, E> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> NodeAddress {
        self.me
    }

    pub fn send(&mut self, to: NodeAddress, msg: M) {
        self.sends.push((to, msg));
    }

    /// Independent per-target sends.
    pub fn multicast(&mut self, targets: &[NodeAddress], msg: M) {
        for t in targets {
            self.sends.push((*t, msg.clone()));
        }
    }

    pub fn set_timer(&mut self, after: Duration, token: u64) {
        self.timers.push((after, token));
    }

    pub fn emit(&mut self, event: E) {
        self.events.push(event);
    }

    /// Marks the node busy for `d` more; queued inputs wait.
    pub fn consume(&mut self, d: Duration) {
        self.busy += d;
    }

    pub fn consumed(&self) -> Duration {
        self.busy
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }
}

/// A node in the simulated network.
pub trait Process<M, E>: Send + 'static {
    fn on_start(&mut self, _ctx: &mut Context<'_, M, E>) {}

    fn on_message(&mut self, ctx: &mut Context<'_, M, E>, from: NodeAddress, msg: M);

    fn on_timer(&mut self, _ctx: &mut Context<'_, M, E>, _token: u64) {}

    /// Drop volatile state; durable state must survive.
    fn on_crash(&mut self) {}

    fn on_restart(&mut self, ctx: &mut Context<'_, M, E>) {
        self.on_start(ctx)
    }

    fn as_any(&self) -> &dyn Any;
}
