//! Client library for one service: read-write transactions with two-phase
//! commit, read-only transactions over the fast and slow paths, and the
//! real-time fence.
//!
//! Each operation is a small state machine fed with the replies addressed to
//! it. A session runs one operation at a time.

mod planner;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

pub use planner::{CommitPlanner, ShardPlacement};
pub use snapshot::{
    calculate_snapshot_ts, check_snapshot, read_at_timestamp, update_prepared, PendingSkip, RoContext, SnapshotCheck,
};

use crate::kv::{Key, ShardId, TxnId, Value, Version};
use crate::messages::{Msg, Part, RoId, Timer};
use crate::simnet::{mix64, NodeId, Outbox, RegionId};
use crate::timebase::{commit_wait, tt_now, wait_until_earliest_after, TrueTimeConfig};
use crate::timestamp::{Micros, Timestamp};

/// Static routing information for one service.
#[derive(Clone, Debug)]
pub struct ServiceRoute {
    pub name: String,
    pub shard_nodes: Vec<NodeId>,
    pub planner: Arc<CommitPlanner>,
    pub clock: TrueTimeConfig,
    pub fence: FenceConfig,
}

impl ServiceRoute {
    pub fn shard_of(&self, key: Key) -> ShardId {
        shard_of(key, self.shard_nodes.len())
    }

    pub fn node(&self, shard: ShardId) -> NodeId {
        self.shard_nodes[shard.0 as usize]
    }
}

/// Static hash partitioning.
pub fn shard_of(key: Key, shards: usize) -> ShardId {
    ShardId((mix64(key) % shards as u64) as u32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FenceConfig {
    /// Bound on `t_ee - t_c` over read-write transactions, in microseconds.
    pub l_us: Micros,
}

/// Instant at which a fence issued with `t_min` may return.
pub fn fence_release(clock: TrueTimeConfig, fence: FenceConfig, t_min: Timestamp, now: Micros) -> Micros {
    wait_until_earliest_after(clock, t_min.plus_micros(fence.l_us), now)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientStats {
    /// Committed transactions whose `t_ee - t_c` exceeded `L`.
    pub l_violations: u64,
    pub max_t_ee_minus_t_c_us: Micros,
    pub ro_slow_path: u64,
}

/// Per-session, per-service client state.
#[derive(Clone, Debug)]
pub struct ClientLib {
    pub route: Arc<ServiceRoute>,
    pub region: RegionId,
    pub t_min: Timestamp,
    pub stats: ClientStats,
}

impl ClientLib {
    pub fn new(route: Arc<ServiceRoute>, region: RegionId) -> Self {
        ClientLib {
            route,
            region,
            t_min: Timestamp::ZERO,
            stats: ClientStats::default(),
        }
    }

    pub fn fence_release(&self, now: Micros) -> Micros {
        fence_release(self.route.clock, self.route.fence, self.t_min, now)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RwEvent {
    Pending,
    Committed { t_c: Timestamp, t_ee: Timestamp },
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
enum RwPhase {
    Reading,
    Committing,
    Waiting { t_c: Timestamp, t_ee: Timestamp },
    Done,
}

/// One attempt of a read-write transaction.
#[derive(Debug, Clone)]
pub struct RwAttempt {
    pub txn: TxnId,
    pub start: Timestamp,
    pub reads: Vec<Key>,
    pub writes: Vec<(Key, Value)>,
    pub observed: BTreeMap<Key, Option<TxnId>>,
    read_nodes: BTreeSet<NodeId>,
    phase: RwPhase,
}

impl RwAttempt {
    /// Starts execution: issues the reads, or commits straight away for blind
    /// writes. The start timestamp, which orders wound-wait, is taken fresh.
    pub fn begin(
        out: &mut Outbox<Msg>,
        lib: &ClientLib,
        txn: TxnId,
        reads: Vec<Key>,
        writes: Vec<(Key, Value)>,
    ) -> Self {
        let start = tt_now(lib.route.clock, out.now()).latest;
        let mut a = RwAttempt {
            txn,
            start,
            reads,
            writes,
            observed: BTreeMap::new(),
            read_nodes: BTreeSet::new(),
            phase: RwPhase::Reading,
        };
        for k in a.reads.clone() {
            let node = lib.route.node(lib.route.shard_of(k));
            a.read_nodes.insert(node);
            out.send(node, Msg::Read { txn, start, key: k });
        }
        if a.reads.is_empty() {
            a.commit(out, lib);
        }
        a
    }

    pub fn is_done(&self) -> bool {
        self.phase == RwPhase::Done
    }

    fn commit(&mut self, out: &mut Outbox<Msg>, lib: &ClientLib) {
        let route = &lib.route;
        let mut parts: BTreeMap<ShardId, Part> = BTreeMap::new();
        let mut add = |s: ShardId, read: Option<Key>, write: Option<(Key, Value)>| {
            let p = parts.entry(s).or_insert_with(|| Part {
                shard: s,
                node: route.node(s),
                reads: Vec::new(),
                writes: Vec::new(),
            });
            p.reads.extend(read);
            p.writes.extend(write);
        };
        for k in &self.reads {
            add(route.shard_of(*k), Some(*k), None);
        }
        for (k, v) in &self.writes {
            add(route.shard_of(*k), None, Some((*k, *v)));
        }
        let ids: Vec<ShardId> = parts.keys().copied().collect();
        let (coord, est) = route.planner.choose(lib.region, &ids);
        let t_ee = tt_now(route.clock, out.now()).earliest.plus_micros(est);
        out.send(
            route.node(coord),
            Msg::Commit {
                txn: self.txn,
                start: self.start,
                t_ee,
                parts: parts.into_values().collect(),
            },
        );
        self.phase = RwPhase::Committing;
    }

    fn abort(&mut self, out: &mut Outbox<Msg>) -> RwEvent {
        for n in &self.read_nodes {
            out.send(*n, Msg::Abort { txn: self.txn });
        }
        self.phase = RwPhase::Done;
        RwEvent::Aborted
    }

    pub fn on_msg(&mut self, out: &mut Outbox<Msg>, lib: &mut ClientLib, msg: &Msg) -> RwEvent {
        match (msg, &self.phase) {
            (Msg::ReadReply { txn, version }, RwPhase::Reading) if *txn == self.txn => {
                self.observed.insert(version.key, version.writer());
                if self.observed.len() == self.reads.len() {
                    self.commit(out, lib);
                }
                RwEvent::Pending
            }
            (Msg::Wounded { txn }, RwPhase::Reading) if *txn == self.txn => self.abort(out),
            (Msg::CommitReply { txn, outcome }, RwPhase::Committing) if *txn == self.txn => match outcome {
                None => {
                    self.phase = RwPhase::Done;
                    RwEvent::Aborted
                }
                Some((t_c, t_ee)) => {
                    let (t_c, t_ee) = (*t_c, *t_ee);
                    let over = t_ee.micros.saturating_sub(t_c.micros);
                    lib.stats.max_t_ee_minus_t_c_us = lib.stats.max_t_ee_minus_t_c_us.max(over);
                    if over > lib.route.fence.l_us {
                        lib.stats.l_violations += 1;
                    }
                    let now = out.now();
                    let release = commit_wait(lib.route.clock, t_c, now)
                        .max(wait_until_earliest_after(lib.route.clock, t_ee, now));
                    self.phase = RwPhase::Waiting { t_c, t_ee };
                    if release > now {
                        out.set_timer_at(release, Msg::Timer(Timer::Wake { epoch: self.txn.0 }));
                        RwEvent::Pending
                    } else {
                        self.finish(lib)
                    }
                }
            },
            _ => RwEvent::Pending,
        }
    }

    pub fn on_wake(&mut self, lib: &mut ClientLib, epoch: u64) -> RwEvent {
        if epoch == self.txn.0 && matches!(self.phase, RwPhase::Waiting { .. }) {
            self.finish(lib)
        } else {
            RwEvent::Pending
        }
    }

    fn finish(&mut self, lib: &mut ClientLib) -> RwEvent {
        let RwPhase::Waiting { t_c, t_ee } = self.phase else {
            unreachable!("finish outside the waiting phase")
        };
        self.phase = RwPhase::Done;
        lib.t_min = lib.t_min.max(t_c);
        RwEvent::Committed { t_c, t_ee }
    }
}

/// Completed read-only transaction.
#[derive(Clone, Debug, PartialEq)]
pub struct RoResult {
    pub t_read: Timestamp,
    pub t_min: Timestamp,
    pub t_snap: Timestamp,
    pub values: Vec<Version>,
    pub slow_path: bool,
}

/// One read-only transaction in flight.
#[derive(Debug, Clone)]
pub struct RoAttempt {
    pub ro: RoId,
    pub t_min: Timestamp,
    ctx: RoContext,
    awaiting: BTreeSet<ShardId>,
    early: Vec<(ShardId, TxnId, crate::messages::Decision, Vec<Version>)>,
}

impl RoAttempt {
    pub fn begin(out: &mut Outbox<Msg>, lib: &ClientLib, ro: RoId, keys: Vec<Key>) -> Self {
        let t_read = tt_now(lib.route.clock, out.now()).latest;
        let mut by_shard: BTreeMap<ShardId, Vec<Key>> = BTreeMap::new();
        for k in &keys {
            by_shard.entry(lib.route.shard_of(*k)).or_default().push(*k);
        }
        for (s, ks) in &by_shard {
            out.send(
                lib.route.node(*s),
                Msg::ROCommit {
                    ro,
                    keys: ks.clone(),
                    t_read,
                    t_min: lib.t_min,
                },
            );
        }
        RoAttempt {
            ro,
            t_min: lib.t_min,
            ctx: RoContext::new(keys, t_read),
            awaiting: by_shard.into_keys().collect(),
            early: Vec::new(),
        }
    }

    pub fn keys(&self) -> &[Key] {
        &self.ctx.keys
    }

    pub fn on_msg(&mut self, lib: &mut ClientLib, msg: &Msg) -> Option<RoResult> {
        match msg {
            Msg::ROFastReply { ro, shard, q, v } if *ro == self.ro => {
                if !self.awaiting.remove(shard) {
                    return None;
                }
                let skips = q.iter().map(|s| {
                    (
                        s.txn,
                        PendingSkip {
                            t_p: s.t_p,
                            writes: s.writes.clone(),
                        },
                    )
                });
                self.ctx.add_fast_reply(*shard, skips, v);
                if !self.awaiting.is_empty() {
                    return None;
                }
                self.ctx.seal();
                for (shard, txn, d, v) in std::mem::take(&mut self.early) {
                    self.ctx.apply_slow_reply(shard, txn, d, &v);
                }
                if self.ctx.check() == SnapshotCheck::Wait {
                    lib.stats.ro_slow_path += 1;
                }
                self.try_finish(lib)
            }
            Msg::ROSlowReply {
                ro,
                shard,
                txn,
                decision,
                v,
            } if *ro == self.ro => {
                if self.ctx.t_snap.is_none() {
                    self.early.push((*shard, *txn, *decision, v.clone()));
                    return None;
                }
                self.ctx.apply_slow_reply(*shard, *txn, *decision, v);
                self.try_finish(lib)
            }
            _ => None,
        }
    }

    fn try_finish(&mut self, lib: &mut ClientLib) -> Option<RoResult> {
        if self.ctx.check() == SnapshotCheck::Wait {
            return None;
        }
        let t_snap = self.ctx.t_snap.expect("sealed");
        debug_assert!(t_snap <= self.ctx.t_read);
        lib.t_min = lib.t_min.max(t_snap);
        Some(RoResult {
            t_read: self.ctx.t_read,
            t_min: self.t_min,
            t_snap,
            values: self.ctx.result(),
            slow_path: false,
        })
    }

    /// Drains the snapshot state, for tests and diagnostics.
    pub fn context(&self) -> &RoContext {
        &self.ctx
    }

    pub fn is_waiting_fast(&self) -> bool {
        !self.awaiting.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::LatencyMatrix;

    #[test]
    fn fence_example() {
        // t_min = 100 ms, L = 50 ms, eps = 10 ms, now = 100 ms: returns just after 160 ms
        let clock = TrueTimeConfig { epsilon_us: 10_000 };
        let f = FenceConfig { l_us: 50_000 };
        assert_eq!(fence_release(clock, f, Timestamp::from_micros(100_000), 100_000), 160_001);
        assert_eq!(fence_release(clock, f, Timestamp::from_micros(100_000), 160_001), 160_001);
        assert_eq!(fence_release(clock, f, Timestamp::ZERO, 100_000), 100_000);
    }

    #[test]
    fn shard_of_is_stable_and_in_range() {
        for k in 0..1000 {
            assert!(shard_of(k, 3).0 < 3);
            assert_eq!(shard_of(k, 3), shard_of(k, 3));
        }
        assert!((0..1000).any(|k| shard_of(k, 3).0 == 2));
    }

    #[test]
    fn blind_write_commits_immediately() {
        let m = LatencyMatrix::single_region("R", 0.2);
        let planner = CommitPlanner::new(
            m,
            vec![ShardPlacement {
                leader: RegionId(0),
                followers: vec![],
            }],
        );
        let route = Arc::new(ServiceRoute {
            name: "kv".into(),
            shard_nodes: vec![NodeId(0)],
            planner: Arc::new(planner),
            clock: TrueTimeConfig::default(),
            fence: FenceConfig { l_us: 1000 },
        });
        let lib = ClientLib::new(route, RegionId(0));
        let mut out = Outbox::new(NodeId(5), 1_000);
        let v = Value {
            writer: TxnId(1),
            key: 3,
            counter: 0,
        };
        RwAttempt::begin(&mut out, &lib, TxnId(1), vec![], vec![(3, v)]);
        assert!(matches!(out.sent().next(), Some((NodeId(0), Msg::Commit { .. }))));
    }
}
