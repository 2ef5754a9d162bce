//! Shard leader: locks, prepared set, versioned store, two-phase commit and
//! the read-only transaction handler.
//!
//! A leader plays participant for every transaction that touches it and
//! coordinator for those whose client picked it. Read-only transactions wait
//! for safe time, then for the prepared transactions they may not skip, and
//! answer with a fast reply; skipped transactions are reported later through
//! slow replies as they commit or abort.

mod locks;
mod mvcc;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use locks::{Acquire, Age, LockMode, LockTable};
pub use mvcc::Store;

use crate::kv::{Key, ShardId, TxnId, Value, Version};
use crate::messages::{Decision, Msg, Part, RoId, Skipped, Timer};
use crate::replication::{Entry, Payload, ReplicatedLog};
use crate::simnet::{NodeId, Outbox, TimerId};
use crate::timebase::{commit_wait, tt_now, TrueTimeConfig};
use crate::timestamp::{Micros, Timestamp};

/// Which read-only protocol the shards and clients run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Strictly serializable: block on every conflicting prepared transaction.
    SpannerSs,
    /// Regular sequential serializability: skip when `t_min` and `t_ee` allow.
    SpannerRss,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SpannerSs => "spanner-ss",
            Mode::SpannerRss => "spanner-rss",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spanner-ss" | "ss" => Ok(Mode::SpannerSs),
            "spanner-rss" | "rss" => Ok(Mode::SpannerRss),
            _ => Err(format!("unknown mode {s:?} (expected spanner-ss or spanner-rss)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Optimizations {
    /// Fast replies carry skipped transactions' buffered writes.
    pub skipped_writes_in_fast_path: bool,
    /// Time blocked in wound-wait is added to the stored `t_ee`.
    pub blocked_time_in_t_ee: bool,
}

impl Default for Optimizations {
    fn default() -> Self {
        Optimizations {
            skipped_writes_in_fast_path: true,
            blocked_time_in_t_ee: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShardConfig {
    pub id: ShardId,
    pub node: NodeId,
    pub mode: Mode,
    pub clock: TrueTimeConfig,
    pub opts: Optimizations,
    pub lock_timeout_us: Micros,
}

/// An in-flight read-write transaction at this shard.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRecord {
    pub txn: TxnId,
    pub t_p: Timestamp,
    pub t_ee: Timestamp,
    pub writes: Vec<(Key, Value)>,
    pub locks: Vec<Key>,
}

impl PreparedRecord {
    fn writes_any(&self, keys: &[Key]) -> bool {
        self.writes.iter().any(|(k, _)| keys.contains(k))
    }
}

#[derive(Debug)]
struct PrepWork {
    writes: Vec<(Key, Value)>,
    keys: Vec<Key>,
    next: usize,
    t_ee: Timestamp,
    wait_since: Option<Micros>,
    blocked_us: Micros,
}

#[derive(Debug)]
struct CoordState {
    client: NodeId,
    start: Timestamp,
    others: Vec<NodeId>,
    waiting: BTreeSet<ShardId>,
    t_p_max: Timestamp,
    t_ee_max: Timestamp,
    local_prepared: bool,
    t_c: Option<Timestamp>,
    logged: bool,
    waited: bool,
}

#[derive(Debug)]
struct TxnState {
    client: NodeId,
    /// Where PrepareOk/PrepareFail go; `None` when this shard coordinates.
    coordinator: Option<NodeId>,
    reads: Vec<Key>,
    pending: BTreeMap<Key, TimerId>,
    prep: Option<PrepWork>,
    coord: Option<CoordState>,
}

#[derive(Debug)]
struct RoWait {
    ro: RoId,
    client: NodeId,
    keys: Vec<Key>,
    t_read: Timestamp,
    skippable: Vec<TxnId>,
    blocking: BTreeSet<TxnId>,
}

#[derive(Debug, Clone)]
struct RoSub {
    ro: RoId,
    client: NodeId,
    keys: Vec<Key>,
}

/// Counters exposed for tests and run summaries.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ShardStats {
    pub wounds: u64,
    pub lock_timeouts: u64,
    pub ro_blocked: u64,
    pub ro_skipped: u64,
    pub commits: u64,
    pub aborts: u64,
}

#[derive(Debug)]
pub struct ShardLeader {
    cfg: ShardConfig,
    log: ReplicatedLog,
    store: Store,
    locks: LockTable,
    txns: HashMap<TxnId, TxnState>,
    prepared: BTreeMap<TxnId, PreparedRecord>,
    decided: HashMap<TxnId, Decision>,
    /// Participant commits waiting for their log entry.
    committing: HashMap<TxnId, Timestamp>,
    safe_waiters: Vec<(RoId, NodeId, Vec<Key>, Timestamp, Timestamp)>,
    ro_waiting: Vec<RoWait>,
    subs: HashMap<TxnId, Vec<RoSub>>,
    to_pump: BTreeSet<Key>,
    stats: ShardStats,
}

impl ShardLeader {
    pub fn new(cfg: ShardConfig, log: ReplicatedLog) -> Self {
        ShardLeader {
            cfg,
            log,
            store: Store::new(),
            locks: LockTable::new(),
            txns: HashMap::new(),
            prepared: BTreeMap::new(),
            decided: HashMap::new(),
            committing: HashMap::new(),
            safe_waiters: Vec::new(),
            ro_waiting: Vec::new(),
            subs: HashMap::new(),
            to_pump: BTreeSet::new(),
            stats: ShardStats::default(),
        }
    }

    pub fn id(&self) -> ShardId {
        self.cfg.id
    }

    pub fn node(&self) -> NodeId {
        self.cfg.node
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn log(&self) -> &ReplicatedLog {
        &self.log
    }

    pub fn prepared(&self) -> impl Iterator<Item = &PreparedRecord> {
        self.prepared.values()
    }

    pub fn stats(&self) -> &ShardStats {
        &self.stats
    }

    pub fn decision(&self, txn: TxnId) -> Option<Decision> {
        self.decided.get(&txn).copied()
    }

    /// Short descriptions of everything blocked here, for deadlock reports.
    pub fn waiters(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (t, s) in &self.txns {
            for k in s.pending.keys() {
                out.push(format!("shard {}: {t} waits for lock on key {k}", self.cfg.id.0));
            }
            if let Some(c) = &s.coord {
                if !c.waiting.is_empty() {
                    out.push(format!("shard {}: {t} coordinator awaits prepares from {:?}", self.cfg.id.0, c.waiting));
                }
            }
        }
        for w in &self.ro_waiting {
            out.push(format!(
                "shard {}: RO {} blocked on prepared {:?}",
                self.cfg.id.0, w.ro.0, w.blocking
            ));
        }
        for (ro, ..) in &self.safe_waiters {
            out.push(format!("shard {}: RO {} waits for safe time", self.cfg.id.0, ro.0));
        }
        out
    }

    fn node_u32(&self) -> u32 {
        self.cfg.node.0
    }

    fn now_latest(&self, now: Micros) -> Timestamp {
        tt_now(self.cfg.clock, now).latest
    }

    pub fn handle(&mut self, out: &mut Outbox<Msg>, from: NodeId, msg: Msg) {
        match msg {
            Msg::Read { txn, start, key } => self.on_read(out, from, txn, start, key),
            Msg::Abort { txn } => self.abort_local(out, txn),
            Msg::Commit { txn, start, t_ee, parts } => self.on_commit(out, from, txn, start, t_ee, parts),
            Msg::Prepare {
                txn,
                start,
                t_ee,
                reads,
                writes,
            } => self.on_prepare(out, from, txn, start, t_ee, reads, writes),
            Msg::PrepareOk { txn, shard, t_p, t_ee } => self.on_prepare_ok(out, txn, shard, t_p, t_ee),
            Msg::PrepareFail { txn, .. } => self.coord_abort(out, txn),
            Msg::Decide { txn, decision } => self.on_decide(out, txn, decision),
            Msg::ROCommit {
                ro,
                keys,
                t_read,
                t_min,
            } => self.on_ro_commit(out, from, ro, keys, t_read, t_min),
            Msg::AppendAck(ack) => {
                let done = self.log.on_ack(from, ack);
                self.on_log_committed(out, done);
            }
            Msg::Timer(Timer::LockTimeout { txn, key }) => self.on_lock_timeout(out, txn, key),
            Msg::Timer(Timer::CommitWait { txn }) => {
                if let Some(c) = self.txns.get_mut(&txn).and_then(|s| s.coord.as_mut()) {
                    c.waited = true;
                }
                self.coord_try_finish(out, txn);
            }
            other => panic!("shard {} got unexpected {other:?}", self.cfg.id.0),
        }
        self.pump(out);
    }

    fn state(&mut self, txn: TxnId, client: NodeId, start: Timestamp) -> &mut TxnState {
        self.locks.register(txn, start);
        self.txns.entry(txn).or_insert_with(|| TxnState {
            client,
            coordinator: None,
            reads: Vec::new(),
            pending: BTreeMap::new(),
            prep: None,
            coord: None,
        })
    }

    /// Acquires a lock, wounding younger holders. True if granted now.
    fn try_lock(&mut self, out: &mut Outbox<Msg>, txn: TxnId, key: Key, mode: LockMode) -> bool {
        loop {
            let prepared = &self.prepared;
            match self.locks.acquire(txn, key, mode, |h| prepared.contains_key(&h)) {
                Acquire::Granted => return true,
                Acquire::Wait { wound } if wound.is_empty() => return false,
                Acquire::Wait { wound } => {
                    for v in wound {
                        self.stats.wounds += 1;
                        self.wound(out, v);
                    }
                }
            }
        }
    }

    fn wait_for_lock(&mut self, out: &mut Outbox<Msg>, txn: TxnId, key: Key) {
        let timeout = self.cfg.lock_timeout_us;
        let s = self.txns.get_mut(&txn).expect("waiting txn has state");
        if !s.pending.contains_key(&key) {
            let id = out.set_timer(timeout, Msg::Timer(Timer::LockTimeout { txn, key }));
            s.pending.insert(key, id);
        }
    }

    fn lock_granted(&mut self, out: &mut Outbox<Msg>, txn: TxnId, key: Key) {
        if let Some(id) = self.txns.get_mut(&txn).and_then(|s| s.pending.remove(&key)) {
            out.cancel(id);
        }
    }

    /// Aborts a transaction that lost a lock to an older one (or timed out).
    fn wound(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        debug_assert!(!self.prepared.contains_key(&txn), "prepared transactions are immune");
        let Some(s) = self.txns.get(&txn) else {
            self.release(txn);
            return;
        };
        let (client, coordinator, preparing, coordinating) =
            (s.client, s.coordinator, s.prep.is_some(), s.coord.is_some());
        if coordinating {
            self.coord_abort(out, txn);
            return;
        }
        self.abort_local(out, txn);
        if preparing {
            if let Some(c) = coordinator {
                out.send(c, Msg::PrepareFail { txn, shard: self.cfg.id });
            }
        } else {
            out.send(client, Msg::Wounded { txn });
        }
    }

    fn release(&mut self, txn: TxnId) {
        for k in self.locks.release_all(txn) {
            self.to_pump.insert(k);
        }
    }

    /// Drops all local state of an aborted transaction.
    fn abort_local(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        if matches!(self.decided.get(&txn), Some(Decision::Commit(_))) {
            return;
        }
        let fresh = self.decided.insert(txn, Decision::Abort).is_none();
        if fresh {
            self.stats.aborts += 1;
        }
        if let Some(s) = self.txns.remove(&txn) {
            for id in s.pending.values() {
                out.cancel(*id);
            }
        }
        self.release(txn);
        self.committing.remove(&txn);
        if self.prepared.remove(&txn).is_some() {
            self.resolved(out, txn, Decision::Abort);
        }
    }

    fn on_read(&mut self, out: &mut Outbox<Msg>, client: NodeId, txn: TxnId, start: Timestamp, key: Key) {
        if self.decided.contains_key(&txn) {
            out.send(client, Msg::Wounded { txn });
            return;
        }
        self.state(txn, client, start).reads.push(key);
        if self.try_lock(out, txn, key, LockMode::Read) {
            self.reply_read(out, txn, key);
        } else if self.txns.contains_key(&txn) {
            self.wait_for_lock(out, txn, key);
        }
    }

    fn reply_read(&mut self, out: &mut Outbox<Msg>, txn: TxnId, key: Key) {
        let client = self.txns[&txn].client;
        out.send(
            client,
            Msg::ReadReply {
                txn,
                version: self.store.latest(key),
            },
        );
    }

    fn on_lock_timeout(&mut self, out: &mut Outbox<Msg>, txn: TxnId, key: Key) {
        let waiting = self.txns.get(&txn).is_some_and(|s| s.pending.contains_key(&key));
        if waiting && !self.prepared.contains_key(&txn) {
            self.stats.lock_timeouts += 1;
            self.wound(out, txn);
        }
    }

    /// Retries queued lock requests on keys whose holders changed.
    fn pump(&mut self, out: &mut Outbox<Msg>) {
        while let Some(key) = self.to_pump.pop_first() {
            for (txn, mode) in self.locks.waiters(key) {
                let still = self.txns.get(&txn).is_some_and(|s| s.pending.contains_key(&key));
                if !still {
                    self.locks.cancel_wait(txn, key);
                    continue;
                }
                if self.try_lock(out, txn, key, mode) {
                    self.lock_granted(out, txn, key);
                    match mode {
                        LockMode::Read => self.reply_read(out, txn, key),
                        LockMode::Write => self.prepare_step(out, txn),
                    }
                }
            }
        }
    }

    fn validate_reads(&self, txn: TxnId, reads: &[Key]) -> bool {
        reads.iter().all(|k| self.locks.holds(txn, *k, LockMode::Read))
    }

    #[allow(clippy::too_many_arguments)]
    fn on_prepare(
        &mut self,
        out: &mut Outbox<Msg>,
        coordinator: NodeId,
        txn: TxnId,
        start: Timestamp,
        t_ee: Timestamp,
        reads: Vec<Key>,
        writes: Vec<(Key, Value)>,
    ) {
        if self.decided.contains_key(&txn) || !self.validate_reads(txn, &reads) {
            self.abort_local(out, txn);
            out.send(coordinator, Msg::PrepareFail { txn, shard: self.cfg.id });
            return;
        }
        let s = self.state(txn, coordinator, start);
        s.coordinator = Some(coordinator);
        self.begin_prepare(out, txn, t_ee, writes);
    }

    fn begin_prepare(&mut self, out: &mut Outbox<Msg>, txn: TxnId, t_ee: Timestamp, writes: Vec<(Key, Value)>) {
        let mut keys: Vec<Key> = writes.iter().map(|(k, _)| *k).collect();
        keys.sort_unstable();
        keys.dedup();
        let s = self.txns.get_mut(&txn).expect("state exists");
        s.prep = Some(PrepWork {
            writes,
            keys,
            next: 0,
            t_ee,
            wait_since: None,
            blocked_us: 0,
        });
        self.prepare_step(out, txn);
    }

    /// Acquires the remaining write locks, then prepares.
    fn prepare_step(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        loop {
            let Some(prep) = self.txns.get_mut(&txn).and_then(|s| s.prep.as_mut()) else {
                return;
            };
            let now = out.now();
            if let Some(since) = prep.wait_since.take() {
                prep.blocked_us += now - since;
            }
            let Some(&key) = prep.keys.get(prep.next) else {
                break;
            };
            if self.try_lock(out, txn, key, LockMode::Write) {
                if let Some(p) = self.txns.get_mut(&txn).and_then(|s| s.prep.as_mut()) {
                    p.next += 1;
                } else {
                    return;
                }
            } else {
                if let Some(p) = self.txns.get_mut(&txn).and_then(|s| s.prep.as_mut()) {
                    p.wait_since = Some(now);
                    self.wait_for_lock(out, txn, key);
                }
                return;
            }
        }
        self.finish_prepare(out, txn);
    }

    fn finish_prepare(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        let s = self.txns.get_mut(&txn).expect("state exists");
        let prep = s.prep.take().expect("preparing");
        let coordinator = s.coordinator;
        let t_ee = if self.cfg.opts.blocked_time_in_t_ee {
            prep.t_ee.plus_micros(prep.blocked_us)
        } else {
            prep.t_ee
        };
        let t_p = self
            .now_latest(out.now())
            .max(self.log.last_ts().successor(self.node_u32()));
        let mut locks: Vec<Key> = self.locks.held_keys(txn).collect();
        locks.sort_unstable();
        self.prepared.insert(
            txn,
            PreparedRecord {
                txn,
                t_p,
                t_ee,
                writes: prep.writes,
                locks,
            },
        );
        match coordinator {
            Some(_) => {
                let (ship, done) = self.log.append(t_p, Payload::Prepare(txn));
                for (f, a) in ship {
                    out.send(f, Msg::Append(a));
                }
                self.on_log_committed(out, done);
            }
            None => {
                // The coordinator's own prepare is not logged; its commit record is.
                let c = self.txns.get_mut(&txn).and_then(|s| s.coord.as_mut()).expect("coordinating");
                c.local_prepared = true;
                c.t_p_max = c.t_p_max.max(t_p);
                c.t_ee_max = c.t_ee_max.max(t_ee);
                self.coord_try_decide(out, txn);
            }
        }
    }

    fn on_log_committed(&mut self, out: &mut Outbox<Msg>, entries: Vec<Entry>) {
        for e in entries {
            match e.payload {
                Payload::Prepare(txn) => {
                    let Some(rec) = self.prepared.get(&txn) else { continue };
                    let Some(c) = self.txns.get(&txn).and_then(|s| s.coordinator) else { continue };
                    out.send(
                        c,
                        Msg::PrepareOk {
                            txn,
                            shard: self.cfg.id,
                            t_p: rec.t_p,
                            t_ee: rec.t_ee,
                        },
                    );
                }
                Payload::Commit(txn) => {
                    if let Some(c) = self.txns.get_mut(&txn).and_then(|s| s.coord.as_mut()) {
                        c.logged = true;
                        self.coord_try_finish(out, txn);
                    } else if let Some(t_c) = self.committing.remove(&txn) {
                        self.apply_commit(out, txn, t_c);
                    }
                }
                Payload::Noop => {}
            }
        }
        self.retry_safe_waiters(out);
    }

    fn on_commit(
        &mut self,
        out: &mut Outbox<Msg>,
        client: NodeId,
        txn: TxnId,
        start: Timestamp,
        t_ee: Timestamp,
        parts: Vec<Part>,
    ) {
        let me = self.cfg.node;
        let others: Vec<NodeId> = parts.iter().map(|p| p.node).filter(|n| *n != me).collect();
        if self.decided.contains_key(&txn) {
            for n in &others {
                out.send(*n, Msg::Decide { txn, decision: Decision::Abort });
            }
            self.abort_local(out, txn);
            out.send(client, Msg::CommitReply { txn, outcome: None });
            return;
        }
        let mut local = None;
        let mut waiting = BTreeSet::new();
        for p in parts {
            if p.node == me {
                local = Some(p);
                continue;
            }
            waiting.insert(p.shard);
            out.send(
                p.node,
                Msg::Prepare {
                    txn,
                    start,
                    t_ee,
                    reads: p.reads,
                    writes: p.writes,
                },
            );
        }
        let local = local.expect("coordinator is a participant");
        let s = self.state(txn, client, start);
        s.client = client;
        s.coord = Some(CoordState {
            client,
            start,
            others,
            waiting,
            t_p_max: Timestamp::ZERO,
            t_ee_max: t_ee,
            local_prepared: false,
            t_c: None,
            logged: false,
            waited: false,
        });
        if !self.validate_reads(txn, &local.reads) {
            self.coord_abort(out, txn);
            return;
        }
        self.begin_prepare(out, txn, t_ee, local.writes);
    }

    fn on_prepare_ok(&mut self, out: &mut Outbox<Msg>, txn: TxnId, shard: ShardId, t_p: Timestamp, t_ee: Timestamp) {
        let Some(c) = self.txns.get_mut(&txn).and_then(|s| s.coord.as_mut()) else {
            return;
        };
        c.waiting.remove(&shard);
        c.t_p_max = c.t_p_max.max(t_p);
        c.t_ee_max = c.t_ee_max.max(t_ee);
        self.coord_try_decide(out, txn);
    }

    fn coord_try_decide(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        let now = out.now();
        let latest = self.now_latest(now);
        let node = self.node_u32();
        let last = self.log.last_ts();
        let clock = self.cfg.clock;
        let Some(c) = self.txns.get_mut(&txn).and_then(|s| s.coord.as_mut()) else {
            return;
        };
        if !c.local_prepared || !c.waiting.is_empty() || c.t_c.is_some() {
            return;
        }
        let t_c = choose_commit_ts(&[c.t_p_max], c.start, latest, node);
        c.t_c = Some(t_c);
        let (ship, done) = self.log.append(t_c.max(last.successor(node)), Payload::Commit(txn));
        for (f, a) in ship {
            out.send(f, Msg::Append(a));
        }
        let release = commit_wait(clock, t_c, now);
        out.set_timer_at(release, Msg::Timer(Timer::CommitWait { txn }));
        self.on_log_committed(out, done);
    }

    fn coord_try_finish(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        let Some(c) = self.txns.get(&txn).and_then(|s| s.coord.as_ref()) else {
            return;
        };
        if !(c.logged && c.waited) {
            return;
        }
        let t_c = c.t_c.expect("decided");
        let (client, t_ee_max, others) = (c.client, c.t_ee_max, c.others.clone());
        for n in others {
            out.send(
                n,
                Msg::Decide {
                    txn,
                    decision: Decision::Commit(t_c),
                },
            );
        }
        out.send(
            client,
            Msg::CommitReply {
                txn,
                outcome: Some((t_c, t_ee_max)),
            },
        );
        self.apply_commit(out, txn, t_c);
    }

    fn coord_abort(&mut self, out: &mut Outbox<Msg>, txn: TxnId) {
        let Some(c) = self.txns.get(&txn).and_then(|s| s.coord.as_ref()) else {
            return;
        };
        if c.t_c.is_some() {
            return;
        }
        let (client, others) = (c.client, c.others.clone());
        for n in others {
            out.send(n, Msg::Decide { txn, decision: Decision::Abort });
        }
        out.send(client, Msg::CommitReply { txn, outcome: None });
        self.abort_local(out, txn);
    }

    fn on_decide(&mut self, out: &mut Outbox<Msg>, txn: TxnId, decision: Decision) {
        if self.decided.contains_key(&txn) || self.committing.contains_key(&txn) {
            return;
        }
        match decision {
            Decision::Abort => self.abort_local(out, txn),
            Decision::Commit(t_c) => {
                assert!(self.prepared.contains_key(&txn), "commit of unprepared {txn}");
                self.committing.insert(txn, t_c);
                let ts = t_c.max(self.log.last_ts().successor(self.node_u32()));
                let (ship, done) = self.log.append(ts, Payload::Commit(txn));
                for (f, a) in ship {
                    out.send(f, Msg::Append(a));
                }
                self.on_log_committed(out, done);
            }
        }
    }

    fn apply_commit(&mut self, out: &mut Outbox<Msg>, txn: TxnId, t_c: Timestamp) {
        let rec = self.prepared.remove(&txn).expect("committing a prepared transaction");
        for (k, v) in &rec.writes {
            self.store.apply(*k, t_c, *v);
        }
        self.decided.insert(txn, Decision::Commit(t_c));
        self.stats.commits += 1;
        self.txns.remove(&txn);
        self.release(txn);
        self.resolved(out, txn, Decision::Commit(t_c));
    }

    fn on_ro_commit(
        &mut self,
        out: &mut Outbox<Msg>,
        client: NodeId,
        ro: RoId,
        keys: Vec<Key>,
        t_read: Timestamp,
        t_min: Timestamp,
    ) {
        if self.log.advance_safe_time(t_read, self.node_u32()) {
            self.ro_begin(out, client, ro, keys, t_read, t_min);
        } else {
            self.safe_waiters.push((ro, client, keys, t_read, t_min));
        }
    }

    fn retry_safe_waiters(&mut self, out: &mut Outbox<Msg>) {
        if self.safe_waiters.is_empty() {
            return;
        }
        let safe = self.log.max_write_ts();
        let (ready, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.safe_waiters)
            .into_iter()
            .partition(|w| w.3 <= safe);
        self.safe_waiters = rest;
        for (ro, client, keys, t_read, t_min) in ready {
            self.ro_begin(out, client, ro, keys, t_read, t_min);
        }
    }

    fn ro_begin(
        &mut self,
        out: &mut Outbox<Msg>,
        client: NodeId,
        ro: RoId,
        keys: Vec<Key>,
        t_read: Timestamp,
        t_min: Timestamp,
    ) {
        let conflicting: Vec<&PreparedRecord> = self
            .prepared
            .values()
            .filter(|p| p.t_p <= t_read && p.writes_any(&keys))
            .collect();
        let (blocking, skippable): (Vec<&PreparedRecord>, Vec<&PreparedRecord>) = match self.cfg.mode {
            Mode::SpannerSs => (conflicting, Vec::new()),
            Mode::SpannerRss => conflicting.into_iter().partition(|p| p.t_p <= t_min || p.t_ee <= t_read),
        };
        let wait = RoWait {
            ro,
            client,
            keys,
            t_read,
            skippable: skippable.iter().map(|p| p.txn).collect(),
            blocking: blocking.iter().map(|p| p.txn).collect(),
        };
        if wait.blocking.is_empty() {
            self.fast_reply(out, wait);
        } else {
            self.stats.ro_blocked += 1;
            self.ro_waiting.push(wait);
        }
    }

    fn fast_reply(&mut self, out: &mut Outbox<Msg>, w: RoWait) {
        let v: Vec<Version> = w.keys.iter().map(|k| self.store.read_at(*k, w.t_read)).collect();
        let mut q = Vec::new();
        for txn in &w.skippable {
            let Some(rec) = self.prepared.get(txn) else { continue };
            let writes = if self.cfg.opts.skipped_writes_in_fast_path {
                rec.writes.iter().filter(|(k, _)| w.keys.contains(k)).copied().collect()
            } else {
                Vec::new()
            };
            q.push(Skipped {
                txn: *txn,
                t_p: rec.t_p,
                writes,
            });
            self.subs.entry(*txn).or_default().push(RoSub {
                ro: w.ro,
                client: w.client,
                keys: w.keys.clone(),
            });
        }
        if !q.is_empty() {
            self.stats.ro_skipped += 1;
        }
        debug_assert!(self.cfg.mode == Mode::SpannerRss || q.is_empty());
        out.send(
            w.client,
            Msg::ROFastReply {
                ro: w.ro,
                shard: self.cfg.id,
                q,
                v,
            },
        );
    }

    /// A prepared transaction left the prepared set: unblock ROs and send slow replies.
    fn resolved(&mut self, out: &mut Outbox<Msg>, txn: TxnId, decision: Decision) {
        let mut ready = Vec::new();
        let mut i = 0;
        while i < self.ro_waiting.len() {
            let w = &mut self.ro_waiting[i];
            w.blocking.remove(&txn);
            if w.blocking.is_empty() {
                ready.push(self.ro_waiting.remove(i));
            } else {
                i += 1;
            }
        }
        for w in ready {
            self.fast_reply(out, w);
        }
        for sub in self.subs.remove(&txn).unwrap_or_default() {
            let v = match decision {
                Decision::Commit(t_c) => sub
                    .keys
                    .iter()
                    .map(|k| self.store.read_at(*k, t_c))
                    .filter(|ver| ver.writer() == Some(txn))
                    .collect(),
                Decision::Abort => Vec::new(),
            };
            out.send(
                sub.client,
                Msg::ROSlowReply {
                    ro: sub.ro,
                    shard: self.cfg.id,
                    txn,
                    decision,
                    v,
                },
            );
        }
    }
}

/// Commit timestamp rule: at least every prepare timestamp, strictly after
/// the transaction's start, and no earlier than `floor` (the coordinator's
/// `TT.now.latest` when it decides).
pub fn choose_commit_ts(prepares: &[Timestamp], start: Timestamp, floor: Timestamp, node: u32) -> Timestamp {
    let max_p = prepares.iter().copied().max().unwrap_or(Timestamp::ZERO);
    max_p.max(start.successor(node)).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::Value;

    fn ts(m: u64) -> Timestamp {
        Timestamp::from_micros(m)
    }

    fn val(w: u64, key: Key) -> Value {
        Value {
            writer: TxnId(w),
            key,
            counter: 0,
        }
    }

    const SHARD: NodeId = NodeId(0);
    const CLIENT: NodeId = NodeId(9);

    fn leader(mode: Mode) -> ShardLeader {
        let cfg = ShardConfig {
            id: ShardId(0),
            node: SHARD,
            mode,
            clock: TrueTimeConfig { epsilon_us: 0 },
            opts: Optimizations::default(),
            lock_timeout_us: 1_000_000,
        };
        ShardLeader::new(cfg, ReplicatedLog::new(ShardId(0), vec![], true))
    }

    fn step(s: &mut ShardLeader, now: Micros, from: NodeId, msg: Msg) -> Vec<(NodeId, Msg)> {
        let mut out = Outbox::new(SHARD, now);
        s.handle(&mut out, from, msg);
        out.sent().map(|(n, m)| (n, m.clone())).collect()
    }

    /// Installs a prepared record directly, as if a transaction prepared here.
    fn prepared(s: &mut ShardLeader, txn: u64, t_p: u64, t_ee: u64, key: Key) {
        s.prepared.insert(
            TxnId(txn),
            PreparedRecord {
                txn: TxnId(txn),
                t_p: ts(t_p),
                t_ee: ts(t_ee),
                writes: vec![(key, val(txn, key))],
                locks: vec![key],
            },
        );
    }

    fn ro(keys: Vec<Key>, t_read: u64, t_min: u64) -> Msg {
        Msg::ROCommit {
            ro: RoId(1),
            keys,
            t_read: ts(t_read),
            t_min: ts(t_min),
        }
    }

    #[test]
    fn commit_ts_examples() {
        assert_eq!(choose_commit_ts(&[ts(8), ts(9)], ts(7), Timestamp::ZERO, 1), ts(9));
        assert!(choose_commit_ts(&[ts(3)], ts(7), Timestamp::ZERO, 1) > ts(7));
        assert_eq!(choose_commit_ts(&[ts(3)], ts(1), ts(50), 1), ts(50));
    }

    #[test]
    fn rss_skips_when_allowed() {
        let mut s = leader(Mode::SpannerRss);
        prepared(&mut s, 1, 5, 20, 7);
        let sent = step(&mut s, 100, CLIENT, ro(vec![7], 15, 3));
        match &sent[..] {
            [(CLIENT, Msg::ROFastReply { q, v, .. })] => {
                assert_eq!(q.len(), 1);
                assert_eq!(q[0].t_p, ts(5));
                assert_eq!(q[0].writes, vec![(7, val(1, 7))]);
                assert_eq!(v, &vec![Version::initial(7)]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rss_blocks_on_t_min_or_t_ee() {
        for (t_ee, t_min) in [(20, 7), (12, 3)] {
            let mut s = leader(Mode::SpannerRss);
            prepared(&mut s, 1, 5, t_ee, 7);
            assert!(step(&mut s, 100, CLIENT, ro(vec![7], 15, t_min)).is_empty());
            assert_eq!(s.stats().ro_blocked, 1);
        }
    }

    #[test]
    fn ss_blocks_on_any_conflicting_prepare() {
        let mut s = leader(Mode::SpannerSs);
        prepared(&mut s, 1, 5, 20, 7);
        assert!(step(&mut s, 100, CLIENT, ro(vec![7], 15, 3)).is_empty());
        // unrelated key and later prepares never block
        let sent = step(&mut s, 100, CLIENT, ro(vec![8], 15, 3));
        assert!(matches!(&sent[..], [(_, Msg::ROFastReply { q, .. })] if q.is_empty()));
        let sent = step(&mut s, 100, CLIENT, ro(vec![7], 4, 3));
        assert!(matches!(&sent[..], [(_, Msg::ROFastReply { q, .. })] if q.is_empty()));
    }

    fn rw_single_shard(s: &mut ShardLeader, txn: u64, key: Key, now: Micros) -> Vec<(NodeId, Msg)> {
        let part = Part {
            shard: ShardId(0),
            node: SHARD,
            reads: vec![],
            writes: vec![(key, val(txn, key))],
        };
        let mut sent = step(
            s,
            now,
            CLIENT,
            Msg::Commit {
                txn: TxnId(txn),
                start: ts(now),
                t_ee: ts(now + 50),
                parts: vec![part],
            },
        );
        sent.extend(step(s, now + 1, SHARD, Msg::Timer(Timer::CommitWait { txn: TxnId(txn) })));
        sent
    }

    #[test]
    fn single_shard_commit_applies_and_replies() {
        let mut s = leader(Mode::SpannerRss);
        let sent = rw_single_shard(&mut s, 1, 7, 100);
        let reply = sent.iter().find_map(|(_, m)| match m {
            Msg::CommitReply { outcome, .. } => Some(*outcome),
            _ => None,
        });
        let (t_c, _) = reply.flatten().expect("committed");
        assert!(t_c > ts(100));
        assert_eq!(s.store().latest(7).writer(), Some(TxnId(1)));
        assert_eq!(s.store().latest(7).t_c, t_c);
    }

    #[test]
    fn blocked_ro_gets_fast_reply_after_commit() {
        let mut s = leader(Mode::SpannerSs);
        let mut out = Outbox::new(SHARD, 100);
        let part = Part {
            shard: ShardId(0),
            node: SHARD,
            reads: vec![],
            writes: vec![(7, val(1, 7))],
        };
        s.handle(
            &mut out,
            CLIENT,
            Msg::Commit {
                txn: TxnId(1),
                start: ts(100),
                t_ee: ts(150),
                parts: vec![part],
            },
        );
        assert!(step(&mut s, 200, CLIENT, ro(vec![7], 210, 0)).is_empty());
        let sent = step(&mut s, 300, SHARD, Msg::Timer(Timer::CommitWait { txn: TxnId(1) }));
        let v = sent.iter().find_map(|(_, m)| match m {
            Msg::ROFastReply { v, .. } => Some(v.clone()),
            _ => None,
        });
        assert_eq!(v.unwrap()[0].writer(), Some(TxnId(1)));
    }

    #[test]
    fn skipped_ro_receives_slow_reply() {
        let mut s = leader(Mode::SpannerRss);
        let mut out = Outbox::new(SHARD, 100);
        let part = Part {
            shard: ShardId(0),
            node: SHARD,
            reads: vec![],
            writes: vec![(7, val(1, 7))],
        };
        s.handle(
            &mut out,
            CLIENT,
            Msg::Commit {
                txn: TxnId(1),
                start: ts(100),
                t_ee: ts(10_000),
                parts: vec![part],
            },
        );
        let fast = step(&mut s, 200, CLIENT, ro(vec![7], 210, 0));
        assert!(matches!(&fast[..], [(_, Msg::ROFastReply { q, .. })] if q.len() == 1));
        let sent = step(&mut s, 300, SHARD, Msg::Timer(Timer::CommitWait { txn: TxnId(1) }));
        let slow = sent.iter().find_map(|(_, m)| match m {
            Msg::ROSlowReply { decision, v, .. } => Some((*decision, v.clone())),
            _ => None,
        });
        let (decision, v) = slow.expect("slow reply");
        assert!(matches!(decision, Decision::Commit(_)));
        assert_eq!(v[0].writer(), Some(TxnId(1)));
    }

    #[test]
    fn older_reader_wounds_younger_executing_writer() {
        let mut s = leader(Mode::SpannerRss);
        // younger txn 2 (start 9) holds a read lock and upgrades via prepare
        step(&mut s, 10, CLIENT, Msg::Read { txn: TxnId(2), start: ts(9), key: 7 });
        let other = NodeId(8);
        let sent = step(
            &mut s,
            20,
            other,
            Msg::Prepare {
                txn: TxnId(1),
                start: ts(5),
                t_ee: ts(100),
                reads: vec![],
                writes: vec![(7, val(1, 7))],
            },
        );
        assert!(sent.iter().any(|(n, m)| *n == CLIENT && matches!(m, Msg::Wounded { txn } if *txn == TxnId(2))));
        assert!(s.prepared().any(|p| p.txn == TxnId(1)));
        assert_eq!(s.stats().wounds, 1);
    }

    #[test]
    fn younger_reader_waits_for_prepared_writer() {
        let mut s = leader(Mode::SpannerRss);
        let mut out = Outbox::new(SHARD, 100);
        let part = Part {
            shard: ShardId(0),
            node: SHARD,
            reads: vec![],
            writes: vec![(7, val(1, 7))],
        };
        s.handle(
            &mut out,
            CLIENT,
            Msg::Commit {
                txn: TxnId(1),
                start: ts(100),
                t_ee: ts(150),
                parts: vec![part],
            },
        );
        // older by start, but the holder is prepared and immune
        assert!(step(&mut s, 110, NodeId(5), Msg::Read { txn: TxnId(2), start: ts(50), key: 7 }).is_empty());
        let sent = step(&mut s, 300, SHARD, Msg::Timer(Timer::CommitWait { txn: TxnId(1) }));
        let read = sent.iter().find_map(|(n, m)| match m {
            Msg::ReadReply { version, .. } if *n == NodeId(5) => Some(*version),
            _ => None,
        });
        assert_eq!(read.unwrap().writer(), Some(TxnId(1)));
    }

    #[test]
    fn duplicate_decide_is_ignored() {
        let mut s = leader(Mode::SpannerRss);
        assert!(step(&mut s, 1, CLIENT, Msg::Decide { txn: TxnId(4), decision: Decision::Abort }).is_empty());
        assert!(step(&mut s, 2, CLIENT, Msg::Decide { txn: TxnId(4), decision: Decision::Abort }).is_empty());
    }

    #[test]
    fn failed_read_validation_aborts_prepare() {
        let mut s = leader(Mode::SpannerRss);
        let sent = step(
            &mut s,
            5,
            NodeId(3),
            Msg::Prepare {
                txn: TxnId(1),
                start: ts(1),
                t_ee: ts(10),
                reads: vec![4],
                writes: vec![],
            },
        );
        assert!(matches!(&sent[..], [(_, Msg::PrepareFail { .. })]));
    }
}
