//! A client process: runs a script or a workload generator one operation at a
//! time, records its history, and fences on service switches when libRSS is on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::checker::{HistoryEvent, Outcome, TxnType};
use crate::client::{ClientLib, RoAttempt, RoResult, RwAttempt, RwEvent};
use crate::kv::{Key, TxnId, Value, Version};
use crate::librss::{CausalContext, ServiceRegistry};
use crate::messages::{Msg, RoId, Timer};
use crate::simnet::{NodeId, Outbox, RegionId};
use crate::timestamp::{Micros, Timestamp};
use crate::workload::{KeySampler, NextAction, SessionGen};

/// One step of a scripted session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Rw {
        service: String,
        reads: Vec<Key>,
        writes: Vec<Key>,
    },
    Ro {
        service: String,
        keys: Vec<Key>,
    },
    Fence {
        service: String,
    },
    Sleep(Micros),
    SleepUntil(Micros),
    /// Sends an application message to another session.
    Signal {
        to: usize,
        id: u64,
        with_context: bool,
    },
    AwaitSignal {
        id: u64,
    },
    /// Repeats a read-only transaction on `key` every `every_us` until it
    /// returns a written value, at most `tries` times.
    PollRo {
        service: String,
        key: Key,
        every_us: Micros,
        tries: u32,
    },
}

impl Step {
    pub fn rw(service: &str, reads: &[Key], writes: &[Key]) -> Self {
        Step::Rw {
            service: service.into(),
            reads: reads.to_vec(),
            writes: writes.to_vec(),
        }
    }

    pub fn ro(service: &str, keys: &[Key]) -> Self {
        Step::Ro {
            service: service.into(),
            keys: keys.to_vec(),
        }
    }

    pub fn fence(service: &str) -> Self {
        Step::Fence {
            service: service.into(),
        }
    }
}

pub enum SessionSource {
    Script(Vec<Step>),
    /// Draws transactions from the run's workload against one service.
    Workload { service: String, seed: u64 },
}

/// Latency sample for one logical transaction. Read-write samples span
/// every retry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub label: &'static str,
    pub read_only: bool,
    pub session: usize,
    pub invoke_us: Micros,
    pub respond_us: Micros,
    pub attempts: u32,
}

impl Sample {
    pub fn latency_us(&self) -> Micros {
        self.respond_us - self.invoke_us
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RwRecord {
    pub txn: TxnId,
    pub service: String,
    pub session: usize,
    pub invoke_us: Micros,
    pub respond_us: Micros,
    pub t_c: Timestamp,
    pub t_ee: Timestamp,
    pub writes: Vec<Key>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoRecord {
    pub txn: TxnId,
    pub service: String,
    pub session: usize,
    pub invoke_us: Micros,
    pub respond_us: Micros,
    pub t_read: Timestamp,
    pub t_min: Timestamp,
    pub t_snap: Timestamp,
    pub values: Vec<Version>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FenceRecord {
    pub txn: TxnId,
    pub service: String,
    pub session: usize,
    pub invoke_us: Micros,
    pub respond_us: Micros,
}

/// State shared by all sessions of a run.
pub struct Shared {
    pub history: Vec<HistoryEvent>,
    pub record_history: bool,
    pub samples: Vec<Sample>,
    pub rw: Vec<RwRecord>,
    pub ro: Vec<RoRecord>,
    pub fences: Vec<FenceRecord>,
    pub aborted_attempts: BTreeMap<&'static str, u64>,
    /// Read-write transactions abandoned after exhausting their retries.
    pub gave_up: u64,
    /// Retries allowed after a read-write transaction's first attempt.
    pub max_retries: u32,
    pub session_nodes: Vec<NodeId>,
    pub keys: Option<KeySampler>,
    /// Workload sessions issue nothing new at or after this instant.
    pub stop_issuing_at: Micros,
    next_id: u64,
}

impl Shared {
    pub fn new(record_history: bool) -> Self {
        Shared {
            history: Vec::new(),
            record_history,
            samples: Vec::new(),
            rw: Vec::new(),
            ro: Vec::new(),
            fences: Vec::new(),
            aborted_attempts: BTreeMap::new(),
            gave_up: 0,
            max_retries: u32::MAX,
            session_nodes: Vec::new(),
            keys: None,
            stop_issuing_at: Micros::MAX,
            next_id: 1,
        }
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn record(&mut self, e: HistoryEvent) -> Option<usize> {
        if self.record_history {
            self.history.push(e);
            Some(self.history.len() - 1)
        } else {
            None
        }
    }
}

enum Source {
    Script(VecDeque<Step>),
    Workload { service: String, gen: SessionGen },
}

#[derive(Clone, Debug)]
enum Work {
    Rw {
        service: String,
        label: &'static str,
        reads: Vec<Key>,
        writes: Vec<Key>,
    },
    Ro {
        service: String,
        label: &'static str,
        keys: Vec<Key>,
    },
}

impl Work {
    fn service(&self) -> &str {
        match self {
            Work::Rw { service, .. } | Work::Ro { service, .. } => service,
        }
    }
}

struct RwOp {
    service: String,
    label: &'static str,
    attempt: RwAttempt,
    first_invoke: Micros,
    attempt_invoke: Micros,
    attempts: u32,
    write_keys: Vec<Key>,
}

struct RoOp {
    service: String,
    label: &'static str,
    attempt: RoAttempt,
    invoke_us: Micros,
}

enum Op {
    Idle,
    Rw(Box<RwOp>),
    Ro(Box<RoOp>),
    Fence {
        service: String,
        txn: TxnId,
        invoke_us: Micros,
        epoch: u64,
    },
    Sleep {
        epoch: u64,
    },
    Await {
        id: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Life {
    Waiting,
    Active,
    Finished,
}

pub struct Session {
    pub index: usize,
    pub node: NodeId,
    pub region: RegionId,
    source: Source,
    libs: BTreeMap<String, ClientLib>,
    registry: ServiceRegistry<()>,
    librss: bool,
    op: Op,
    queued: Option<Work>,
    life: Life,
    received: BTreeSet<u64>,
    pending_recvs: Vec<u64>,
    last_respond: Option<usize>,
    epoch: u64,
    counter: u32,
    poll: Option<(String, Key, Micros, u32)>,
}

/// Timer epochs for sleeps and fences live above transaction ids.
const EPOCH_BASE: u64 = 1 << 62;

impl Session {
    pub fn new(
        index: usize,
        node: NodeId,
        region: RegionId,
        source: SessionSource,
        libs: BTreeMap<String, ClientLib>,
        librss: bool,
        workload: Option<&crate::workload::WorkloadConfig>,
    ) -> Self {
        let mut registry = ServiceRegistry::new();
        for name in libs.keys() {
            registry.register_service(name, ()).expect("service names are unique");
        }
        let source = match source {
            SessionSource::Script(steps) => Source::Script(steps.into()),
            SessionSource::Workload { service, seed } => Source::Workload {
                service,
                gen: SessionGen::new(workload.expect("workload sessions need a workload config"), seed),
            },
        };
        Session {
            index,
            node,
            region,
            source,
            libs,
            registry,
            librss,
            op: Op::Idle,
            queued: None,
            life: Life::Waiting,
            received: BTreeSet::new(),
            pending_recvs: Vec::new(),
            last_respond: None,
            epoch: EPOCH_BASE,
            counter: 0,
            poll: None,
        }
    }

    pub fn finished(&self) -> bool {
        self.life == Life::Finished
    }

    pub fn lib(&self, service: &str) -> &ClientLib {
        &self.libs[service]
    }

    pub fn libs(&self) -> impl Iterator<Item = &ClientLib> {
        self.libs.values()
    }

    pub fn describe(&self) -> Option<String> {
        let what = match (&self.op, self.life) {
            (_, Life::Finished) | (_, Life::Waiting) => return None,
            (Op::Idle, _) => "idle".to_string(),
            (Op::Rw(r), _) => format!("read-write {} at {}", r.attempt.txn, r.service),
            (Op::Ro(r), _) => format!("read-only {} at {}", r.attempt.ro.0, r.service),
            (Op::Fence { service, .. }, _) => format!("fence at {service}"),
            (Op::Sleep { .. }, _) => "sleep".into(),
            (Op::Await { id }, _) => format!("awaits signal {id}"),
        };
        Some(format!("session {}: {what}", self.index))
    }

    pub fn handle(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, msg: Msg) {
        match msg {
            Msg::Timer(Timer::SessionArrival) => {
                if self.life == Life::Waiting {
                    self.life = Life::Active;
                }
            }
            Msg::Timer(Timer::Wake { epoch }) => self.on_wake(out, sh, epoch),
            Msg::Signal { id, ctx } => {
                self.received.insert(id);
                self.pending_recvs.push(id);
                if let Some(ctx) = ctx {
                    self.merge_context(&ctx);
                }
                if matches!(self.op, Op::Await { id: w } if w == id) {
                    self.op = Op::Idle;
                }
            }
            other => self.on_reply(out, sh, &other),
        }
        self.advance(out, sh);
    }

    fn merge_context(&mut self, ctx: &CausalContext) {
        self.registry.propagate_context(ctx);
        if let Some(lib) = ctx.last_service.as_ref().and_then(|s| self.libs.get_mut(s)) {
            lib.t_min = lib.t_min.max(ctx.t_min);
        }
    }

    fn on_wake(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, epoch: u64) {
        match &mut self.op {
            Op::Rw(r) => {
                let lib = self.libs.get_mut(&r.service).expect("registered");
                let ev = r.attempt.on_wake(lib, epoch);
                self.on_rw_event(out, sh, ev);
            }
            Op::Fence { epoch: e, .. } if *e == epoch => self.finish_fence(out.now(), sh),
            Op::Sleep { epoch: e } if *e == epoch => self.op = Op::Idle,
            _ => {}
        }
    }

    fn on_reply(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, msg: &Msg) {
        match &mut self.op {
            Op::Rw(r) => {
                let lib = self.libs.get_mut(&r.service).expect("registered");
                let ev = r.attempt.on_msg(out, lib, msg);
                self.on_rw_event(out, sh, ev);
            }
            Op::Ro(r) => {
                let lib = self.libs.get_mut(&r.service).expect("registered");
                if let Some(res) = r.attempt.on_msg(lib, msg) {
                    self.finish_ro(out.now(), sh, res);
                }
            }
            _ => {}
        }
    }

    fn next_epoch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    fn advance(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared) {
        while self.life == Life::Active && matches!(self.op, Op::Idle) {
            if let Some(w) = self.queued.take() {
                self.start_work(out, sh, w);
                continue;
            }
            let step = match &mut self.source {
                Source::Script(steps) => match steps.pop_front() {
                    Some(s) => s,
                    None => {
                        self.life = Life::Finished;
                        break;
                    }
                },
                Source::Workload { service, gen } => {
                    if out.now() >= sh.stop_issuing_at {
                        self.life = Life::Finished;
                        break;
                    }
                    let keys = sh.keys.as_ref().expect("workload sessions need a key sampler");
                    match gen.next_action(keys) {
                        NextAction::End => {
                            self.life = Life::Finished;
                            break;
                        }
                        NextAction::Think(us) => Step::Sleep(us),
                        NextAction::Txn(t) if t.kind.is_read_only() => Step::Ro {
                            service: service.clone(),
                            keys: t.reads,
                        },
                        NextAction::Txn(t) => {
                            let w = Work::Rw {
                                service: service.clone(),
                                label: t.kind.name(),
                                reads: t.reads,
                                writes: t.writes,
                            };
                            self.begin_work(out, sh, w);
                            continue;
                        }
                    }
                }
            };
            let label_ro = match &self.source {
                Source::Workload { .. } => crate::workload::TxnKind::LoadTimeline.name(),
                Source::Script(_) => "ro",
            };
            match step {
                Step::Rw { service, reads, writes } => self.begin_work(
                    out,
                    sh,
                    Work::Rw {
                        service,
                        label: "rw",
                        reads,
                        writes,
                    },
                ),
                Step::Ro { service, keys } => self.begin_work(
                    out,
                    sh,
                    Work::Ro {
                        service,
                        label: label_ro,
                        keys,
                    },
                ),
                Step::Fence { service } => self.start_fence(out, sh, service),
                Step::Sleep(us) => {
                    if us > 0 {
                        let epoch = self.next_epoch();
                        out.set_timer(us, Msg::Timer(Timer::Wake { epoch }));
                        self.op = Op::Sleep { epoch };
                    }
                }
                Step::SleepUntil(at) => {
                    if at > out.now() {
                        let epoch = self.next_epoch();
                        out.set_timer_at(at, Msg::Timer(Timer::Wake { epoch }));
                        self.op = Op::Sleep { epoch };
                    }
                }
                Step::Signal { to, id, with_context } => {
                    if let Some(i) = self.last_respond {
                        sh.history[i].sends.push(id);
                    }
                    let ctx = with_context.then(|| self.registry.context().clone());
                    out.send(sh.session_nodes[to], Msg::Signal { id, ctx });
                }
                Step::AwaitSignal { id } => {
                    if !self.received.contains(&id) {
                        self.op = Op::Await { id };
                    }
                }
                Step::PollRo {
                    service,
                    key,
                    every_us,
                    tries,
                } => {
                    if tries > 0 {
                        self.poll = Some((service.clone(), key, every_us, tries - 1));
                        self.begin_work(
                            out,
                            sh,
                            Work::Ro {
                                service,
                                label: label_ro,
                                keys: vec![key],
                            },
                        );
                    }
                }
            }
        }
    }

    /// Fences the previous service first when libRSS sees a switch.
    fn begin_work(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, w: Work) {
        if self.librss {
            if let Some(prev) = self.registry.switch_to(w.service()).expect("registered service") {
                self.queued = Some(w);
                self.start_fence(out, sh, prev);
                return;
            }
        }
        self.start_work(out, sh, w);
    }

    fn invoke_event(&mut self, txn: TxnId, service: &str, t: TxnType, now: Micros) -> HistoryEvent {
        let mut e = HistoryEvent::invoke(txn, self.index as u64, service, t, now);
        e.recvs = std::mem::take(&mut self.pending_recvs);
        e
    }

    fn start_work(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, w: Work) {
        let now = out.now();
        match w {
            Work::Rw {
                service,
                label,
                reads,
                writes,
            } => {
                let txn = TxnId(sh.fresh_id());
                let values = self.values(txn, &writes);
                let e = self.invoke_event(txn, &service, TxnType::Rw, now).with_writes(values.clone());
                sh.record(e);
                let attempt = RwAttempt::begin(out, &self.libs[&service], txn, reads, values);
                self.op = Op::Rw(Box::new(RwOp {
                    service,
                    label,
                    attempt,
                    first_invoke: now,
                    attempt_invoke: now,
                    attempts: 1,
                    write_keys: writes,
                }));
            }
            Work::Ro { service, label, keys } => {
                let id = sh.fresh_id();
                let e = self.invoke_event(TxnId(id), &service, TxnType::Ro, now);
                sh.record(e);
                let attempt = RoAttempt::begin(out, &self.libs[&service], RoId(id), keys);
                self.op = Op::Ro(Box::new(RoOp {
                    service,
                    label,
                    attempt,
                    invoke_us: now,
                }));
            }
        }
    }

    fn values(&mut self, txn: TxnId, keys: &[Key]) -> Vec<(Key, Value)> {
        keys.iter()
            .map(|k| {
                self.counter += 1;
                (
                    *k,
                    Value {
                        writer: txn,
                        key: *k,
                        counter: self.counter,
                    },
                )
            })
            .collect()
    }

    fn on_rw_event(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, ev: RwEvent) {
        let now = out.now();
        let Op::Rw(r) = &mut self.op else { return };
        match ev {
            RwEvent::Pending => {}
            RwEvent::Aborted => {
                let old = r.attempt.txn;
                let e = HistoryEvent::respond(old, self.index as u64, &r.service, TxnType::Rw, now)
                    .with_outcome(Outcome::Aborted);
                self.last_respond = sh.record(e).or(self.last_respond);
                *sh.aborted_attempts.entry(r.label).or_default() += 1;
                if r.attempts > sh.max_retries {
                    sh.gave_up += 1;
                    self.op = Op::Idle;
                    return;
                }

                let txn = TxnId(sh.fresh_id());
                let reads = r.attempt.reads.clone();
                let keys = r.write_keys.clone();
                let service = r.service.clone();
                let values = self.values(txn, &keys);
                let e = self.invoke_event(txn, &service, TxnType::Rw, now).with_writes(values.clone());
                sh.record(e);
                let attempt = RwAttempt::begin(out, &self.libs[&service], txn, reads, values);
                let Op::Rw(r) = &mut self.op else { unreachable!() };
                r.attempt = attempt;
                r.attempt_invoke = now;
                r.attempts += 1;
            }
            RwEvent::Committed { t_c, t_ee } => {
                let reads: Vec<(Key, Option<TxnId>)> = r.attempt.observed.iter().map(|(k, w)| (*k, *w)).collect();
                let e = HistoryEvent::respond(r.attempt.txn, self.index as u64, &r.service, TxnType::Rw, now)
                    .with_reads(reads)
                    .with_commit(t_c);
                self.last_respond = sh.record(e).or(self.last_respond);
                sh.rw.push(RwRecord {
                    txn: r.attempt.txn,
                    service: r.service.clone(),
                    session: self.index,
                    invoke_us: r.attempt_invoke,
                    respond_us: now,
                    t_c,
                    t_ee,
                    writes: r.write_keys.clone(),
                });
                sh.samples.push(Sample {
                    label: r.label,
                    read_only: false,
                    session: self.index,
                    invoke_us: r.first_invoke,
                    respond_us: now,
                    attempts: r.attempts,
                });
                self.registry.observe(t_c);
                self.op = Op::Idle;
            }
        }
    }

    fn finish_ro(&mut self, now: Micros, sh: &mut Shared, res: RoResult) {
        let Op::Ro(r) = &self.op else { return };
        let txn = TxnId(r.attempt.ro.0);
        let reads = res.values.iter().map(|v| (v.key, v.writer())).collect();
        let unwritten = res.values.iter().all(|v| v.value.is_none());
        let e = HistoryEvent::respond(txn, self.index as u64, &r.service, TxnType::Ro, now)
            .with_reads(reads)
            .with_snapshot(res.t_read, res.t_min, res.t_snap);
        self.last_respond = sh.record(e).or(self.last_respond);
        sh.ro.push(RoRecord {
            txn,
            service: r.service.clone(),
            session: self.index,
            invoke_us: r.invoke_us,
            respond_us: now,
            t_read: res.t_read,
            t_min: res.t_min,
            t_snap: res.t_snap,
            values: res.values,
        });
        sh.samples.push(Sample {
            label: r.label,
            read_only: true,
            session: self.index,
            invoke_us: r.invoke_us,
            respond_us: now,
            attempts: 1,
        });
        self.registry.observe(res.t_snap);
        self.op = Op::Idle;
        if let Some((service, key, every_us, tries)) = self.poll.take() {
            if unwritten {
                if let Source::Script(steps) = &mut self.source {
                    steps.push_front(Step::PollRo {
                        service,
                        key,
                        every_us,
                        tries,
                    });
                    steps.push_front(Step::Sleep(every_us));
                }
            }
        }
    }

    fn start_fence(&mut self, out: &mut Outbox<Msg>, sh: &mut Shared, service: String) {
        let now = out.now();
        let txn = TxnId(sh.fresh_id());
        let e = self.invoke_event(txn, &service, TxnType::Fence, now);
        sh.record(e);
        let release = self.libs[&service].fence_release(now);
        let epoch = self.next_epoch();
        self.op = Op::Fence {
            service,
            txn,
            invoke_us: now,
            epoch,
        };
        if release > now {
            out.set_timer_at(release, Msg::Timer(Timer::Wake { epoch }));
        } else {
            self.finish_fence(now, sh);
        }
    }

    fn finish_fence(&mut self, now: Micros, sh: &mut Shared) {
        let Op::Fence {
            service, txn, invoke_us, ..
        } = &self.op
        else {
            return;
        };
        let e = HistoryEvent::respond(*txn, self.index as u64, service, TxnType::Fence, now);
        self.last_respond = sh.record(e).or(self.last_respond);
        sh.fences.push(FenceRecord {
            txn: *txn,
            service: service.clone(),
            session: self.index,
            invoke_us: *invoke_us,
            respond_us: now,
        });
        self.op = Op::Idle;
    }
}
