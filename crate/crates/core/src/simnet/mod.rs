//! Deterministic discrete-event simulation of a wide-area network.
//!
//! [`Sim`] owns simulated time and a single event queue. Nodes are plain
//! state machines living in a [`World`]; the simulator hands each event to
//! the world together with an [`Outbox`] that collects the messages and
//! timers the handler wants to emit. Nothing blocks: a wait is a timer or a
//! message that resumes a continuation later.
//!
//! Channels are point-to-point and FIFO. A message's one-way delay is half
//! the region RTT plus uniform jitter; the jitter for the `n`th message on a
//! channel is a pure function of `(seed, from, to, n)`, so traffic on one
//! channel never perturbs delays on another.

mod latency;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

pub use latency::{LatencyMatrix, RegionId, DEFAULT_JITTER_FRACTION};

use crate::error::{ConfigError, SimError};
use crate::timestamp::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(pub u64);

/// Messages report a static label so the simulator can count traffic by type.
pub trait Message {
    fn label(&self) -> &'static str;
}

#[derive(Debug)]
pub enum EventKind<M> {
    Deliver { from: NodeId, to: NodeId, msg: M },
    Timer { node: NodeId, id: TimerId, msg: M },
}

#[derive(Debug)]
pub struct Event<M> {
    pub fire_at: Micros,
    pub seq: u64,
    pub kind: EventKind<M>,
}

impl<M> Event<M> {
    pub fn target(&self) -> NodeId {
        match &self.kind {
            EventKind::Deliver { to, .. } => *to,
            EventKind::Timer { node, .. } => *node,
        }
    }
}

struct Queued<M>(Event<M>);

impl<M> PartialEq for Queued<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.fire_at, self.0.seq) == (other.0.fire_at, other.0.seq)
    }
}
impl<M> Eq for Queued<M> {}
impl<M> PartialOrd for Queued<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Queued<M> {
    // min-heap on (fire_at, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// What a handler asked for while processing one event.
#[derive(Debug)]
pub enum Action<M> {
    Send { to: NodeId, msg: M },
    Timer { id: TimerId, delay: Micros, msg: M },
    Cancel(TimerId),
}

/// Collects the effects of one handler invocation.
#[derive(Debug)]
pub struct Outbox<M> {
    now: Micros,
    me: NodeId,
    next_timer: u64,
    actions: Vec<Action<M>>,
}

impl<M> Outbox<M> {
    /// A detached outbox, for driving state machines in unit tests.
    pub fn new(me: NodeId, now: Micros) -> Self {
        Outbox {
            now,
            me,
            next_timer: 1,
            actions: Vec::new(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    pub fn send(&mut self, to: NodeId, msg: M) {
        self.actions.push(Action::Send { to, msg });
    }

    pub fn set_timer(&mut self, delay: Micros, msg: M) -> TimerId {
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        self.actions.push(Action::Timer { id, delay, msg });
        id
    }

    /// Arms a timer for an absolute instant (immediately if it is not in the future).
    pub fn set_timer_at(&mut self, at: Micros, msg: M) -> TimerId {
        let delay = at.saturating_sub(self.now);
        self.set_timer(delay, msg)
    }

    pub fn cancel(&mut self, id: TimerId) {
        self.actions.push(Action::Cancel(id));
    }

    pub fn actions(&self) -> &[Action<M>] {
        &self.actions
    }

    pub fn take_actions(&mut self) -> Vec<Action<M>> {
        std::mem::take(&mut self.actions)
    }

    /// Sent messages, in emission order.
    pub fn sent(&self) -> impl Iterator<Item = (NodeId, &M)> {
        self.actions.iter().filter_map(|a| match a {
            Action::Send { to, msg } => Some((*to, msg)),
            _ => None,
        })
    }
}

/// The protocol side of a simulation: dispatches events to node state machines.
pub trait World<M> {
    fn handle(&mut self, out: &mut Outbox<M>, event: Event<M>);

    /// True once the run's goal is reached.
    fn done(&self) -> bool {
        false
    }

    /// Human-readable description of everything currently waiting.
    fn blocked_waiters(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Default, Clone, Copy)]
struct Channel {
    last_delivery: Micros,
    sent: u64,
}

pub struct Sim<M> {
    now: Micros,
    seq: u64,
    seed: u64,
    queue: BinaryHeap<Queued<M>>,
    regions: Vec<RegionId>,
    matrix: LatencyMatrix,
    channels: HashMap<(NodeId, NodeId), Channel>,
    cancelled: HashSet<TimerId>,
    next_timer: u64,
    counts: BTreeMap<&'static str, u64>,
    digest: u64,
    trace: Option<Vec<TraceEntry>>,
    processed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub fire_at: Micros,
    pub seq: u64,
    pub target: NodeId,
    pub what: String,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv(mut h: u64, x: u64) -> u64 {
    for b in x.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer, used to derive independent streams from the run seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream of the run's randomness.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(stream)) ^ index)
}

impl<M: Message + std::fmt::Debug> Sim<M> {
    pub fn new(matrix: LatencyMatrix, seed: u64) -> Self {
        Sim {
            now: 0,
            seq: 0,
            seed,
            queue: BinaryHeap::new(),
            regions: Vec::new(),
            matrix,
            channels: HashMap::new(),
            cancelled: HashSet::new(),
            next_timer: 1,
            counts: BTreeMap::new(),
            digest: FNV_OFFSET,
            trace: None,
            processed: 0,
        }
    }

    /// Keeps a full event trace in memory (off by default; the digest is always kept).
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceEntry]> {
        self.trace.as_deref()
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &LatencyMatrix {
        &self.matrix
    }

    pub fn add_node(&mut self, region: RegionId) -> Result<NodeId, ConfigError> {
        if region.0 >= self.matrix.len() {
            return Err(ConfigError::UnknownRegion(format!("#{}", region.0)));
        }
        self.regions.push(region);
        Ok(NodeId(self.regions.len() as u32 - 1))
    }

    pub fn region_of(&self, node: NodeId) -> Option<RegionId> {
        self.regions.get(node.0 as usize).copied()
    }

    pub fn message_counts(&self) -> &BTreeMap<&'static str, u64> {
        &self.counts
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn push(&mut self, fire_at: Micros, kind: EventKind<M>) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Queued(Event { fire_at, seq, kind }));
    }

    /// Schedules delivery of `msg` and returns the delivery instant.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<Micros, ConfigError> {
        let ra = self.region_of(from).ok_or(ConfigError::UnknownNode(from.0))?;
        let rb = self.region_of(to).ok_or(ConfigError::UnknownNode(to.0))?;
        let base = self.matrix.one_way_us(ra, rb);
        let max_jitter = self.matrix.max_jitter_us(ra, rb);
        let chan = self.channels.entry((from, to)).or_default();
        let jitter = if max_jitter == 0 {
            0
        } else {
            let r = mix64(self.seed ^ mix64(((from.0 as u64) << 32) | to.0 as u64) ^ mix64(chan.sent));
            r % (max_jitter + 1)
        };
        chan.sent += 1;
        let at = (self.now + base + jitter).max(chan.last_delivery);
        chan.last_delivery = at;
        *self.counts.entry(msg.label()).or_default() += 1;
        self.push(at, EventKind::Deliver { from, to, msg });
        Ok(at)
    }

    pub fn set_timer(&mut self, node: NodeId, delay: Micros, msg: M) -> TimerId {
        let id = TimerId(self.next_timer);
        self.next_timer += 1;
        self.push(self.now + delay, EventKind::Timer { node, id, msg });
        id
    }

    pub fn cancel(&mut self, id: TimerId) {
        self.cancelled.insert(id);
    }

    fn outbox(&self, me: NodeId) -> Outbox<M> {
        Outbox {
            now: self.now,
            me,
            next_timer: self.next_timer,
            actions: Vec::new(),
        }
    }

    /// Applies the effects collected in `out` on behalf of `out.me()`.
    pub fn apply(&mut self, out: Outbox<M>) -> Result<(), ConfigError> {
        self.next_timer = self.next_timer.max(out.next_timer);
        let me = out.me;
        for action in out.actions {
            match action {
                Action::Send { to, msg } => {
                    self.send(me, to, msg)?;
                }
                Action::Timer { id, delay, msg } => {
                    self.push(self.now + delay, EventKind::Timer { node: me, id, msg });
                }
                Action::Cancel(id) => {
                    self.cancelled.insert(id);
                }
            }
        }
        Ok(())
    }

    /// Pops the next live event, advancing simulated time to it.
    fn pop(&mut self, horizon: Micros) -> Option<Event<M>> {
        loop {
            let head = self.queue.peek()?;
            if head.0.fire_at > horizon {
                return None;
            }
            let Queued(ev) = self.queue.pop().expect("peeked");
            if let EventKind::Timer { id, .. } = &ev.kind {
                if self.cancelled.remove(id) {
                    continue;
                }
            }
            debug_assert!(ev.fire_at >= self.now, "time went backwards");
            self.now = ev.fire_at;
            return Some(ev);
        }
    }

    fn record(&mut self, ev: &Event<M>) {
        let target = ev.target();
        let label = match &ev.kind {
            EventKind::Deliver { msg, .. } | EventKind::Timer { msg, .. } => msg.label(),
        };
        self.digest = fnv(self.digest, ev.fire_at);
        self.digest = fnv(self.digest, target.0 as u64);
        for b in label.bytes() {
            self.digest = fnv(self.digest, b as u64);
        }
        if let Some(trace) = &mut self.trace {
            let what = match &ev.kind {
                EventKind::Deliver { from, msg, .. } => format!("{}<-{} {:?}", target.0, from.0, msg),
                EventKind::Timer { msg, .. } => format!("{} timer {:?}", target.0, msg),
            };
            trace.push(TraceEntry {
                fire_at: ev.fire_at,
                seq: ev.seq,
                target,
                what,
            });
        }
        self.processed += 1;
    }

    fn dispatch<W: World<M>>(&mut self, world: &mut W, ev: Event<M>) -> Result<(), ConfigError> {
        self.record(&ev);
        let mut out = self.outbox(ev.target());
        world.handle(&mut out, ev);
        self.apply(out)
    }

    /// Processes every event due at or before `horizon`, then advances time to it.
    pub fn run_until<W: World<M>>(&mut self, world: &mut W, horizon: Micros) -> Result<Micros, SimError> {
        while let Some(ev) = self.pop(horizon) {
            self.dispatch(world, ev)?;
        }
        self.now = self.now.max(horizon);
        Ok(self.now)
    }

    /// Runs until the world reports `done()`. Running out of events first is a
    /// deadlock; passing `horizon` first is reported with the remaining waiters.
    pub fn run_to_completion<W: World<M>>(&mut self, world: &mut W, horizon: Micros) -> Result<Micros, SimError> {
        loop {
            if world.done() {
                return Ok(self.now);
            }
            match self.pop(horizon) {
                Some(ev) => self.dispatch(world, ev)?,
                None if self.queue.is_empty() => {
                    return Err(SimError::Deadlock {
                        at: self.now,
                        waiters: world.blocked_waiters(),
                    })
                }
                None => {
                    return Err(SimError::Horizon {
                        horizon,
                        waiters: world.blocked_waiters(),
                    })
                }
            }
        }
    }
}
