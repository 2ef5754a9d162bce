//! Client-side snapshot computation for read-only transactions.

use std::collections::BTreeMap;

use crate::kv::{Key, ShardId, TxnId, Value, Version};
use crate::messages::Decision;
use crate::timestamp::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotCheck {
    Wait,
    Commit,
}

/// A skipped prepared transaction the client has not resolved yet.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingSkip {
    pub t_p: Timestamp,
    /// Buffered writes to the RO's keys, when the fast path carries them.
    pub writes: Vec<(Key, Value)>,
}

/// Per-RO state: the keys, `t_read`, the accumulated versions `V` and the
/// pending skipped transactions `P`.
#[derive(Clone, Debug, Default)]
pub struct RoContext {
    pub keys: Vec<Key>,
    pub t_read: Timestamp,
    pub t_snap: Option<Timestamp>,
    /// Keyed by transaction and the shard that skipped it.
    pub pending: BTreeMap<(TxnId, ShardId), PendingSkip>,
    pub versions: Vec<Version>,
}

/// `max over k in K of (min t_c among the versions of k in V)`.
///
/// Panics if some key has no version: shards always return one, the initial
/// version at `t_c = 0` if nothing else.
pub fn calculate_snapshot_ts(keys: &[Key], versions: &[Version]) -> Timestamp {
    keys.iter()
        .map(|k| {
            versions
                .iter()
                .filter(|v| v.key == *k)
                .map(|v| v.t_c)
                .min()
                .unwrap_or_else(|| panic!("no version returned for key {k}"))
        })
        .max()
        .unwrap_or(Timestamp::ZERO)
}

/// WAIT iff some pending prepare timestamp is `<= t_snap`.
pub fn check_snapshot<'a>(pending: impl IntoIterator<Item = &'a Timestamp>, t_snap: Timestamp) -> SnapshotCheck {
    match pending.into_iter().min() {
        Some(t_p) if *t_p <= t_snap => SnapshotCheck::Wait,
        _ => SnapshotCheck::Commit,
    }
}

/// Applies a decision about `txn` reported by `shard` (`None` when the
/// commit was seen in a returned version rather than in a slow reply).
///
/// A transaction skipped at several shards has one entry per shard. An abort,
/// or a commit after the snapshot, clears them all. A commit at or before the
/// snapshot merges `v_prime` and clears the reporting shard's entry, plus any
/// entry whose buffered writes stand in for that shard's slow reply. Unknown
/// entries are ignored.
pub fn update_prepared(
    pending: &mut BTreeMap<(TxnId, ShardId), PendingSkip>,
    versions: &mut Vec<Version>,
    txn: TxnId,
    shard: Option<ShardId>,
    decision: Decision,
    t_snap: Timestamp,
    v_prime: &[Version],
) {
    if let Some(sh) = shard {
        if !pending.contains_key(&(txn, sh)) {
            return;
        }
    }
    let mine: Vec<ShardId> = pending.range((txn, ShardId(0))..=(txn, ShardId(u32::MAX))).map(|((_, sh), _)| *sh).collect();
    let t_c = match decision {
        Decision::Commit(t_c) if t_c <= t_snap => t_c,
        _ => {
            for sh in mine {
                pending.remove(&(txn, sh));
            }
            return;
        }
    };
    let mut add = |v: Version| {
        if !versions.contains(&v) {
            versions.push(v);
        }
    };
    v_prime.iter().copied().for_each(&mut add);
    for sh in mine {
        let buffered = !pending[&(txn, sh)].writes.is_empty();
        if Some(sh) != shard && !buffered {
            continue;
        }
        let skip = pending.remove(&(txn, sh)).expect("listed");
        for (key, value) in skip.writes {
            add(Version {
                t_c,
                key,
                value: Some(value),
            });
        }
    }
}

/// Per key, the version with the greatest `t_c <= t_snap` (initial if none).
pub fn read_at_timestamp(keys: &[Key], versions: &[Version], t_snap: Timestamp) -> Vec<Version> {
    keys.iter()
        .map(|k| {
            versions
                .iter()
                .filter(|v| v.key == *k && v.t_c <= t_snap)
                .max_by_key(|v| v.t_c)
                .copied()
                .unwrap_or_else(|| Version::initial(*k))
        })
        .collect()
}

impl RoContext {
    pub fn new(keys: Vec<Key>, t_read: Timestamp) -> Self {
        RoContext {
            keys,
            t_read,
            ..Default::default()
        }
    }

    pub fn add_fast_reply(&mut self, shard: ShardId, q: impl IntoIterator<Item = (TxnId, PendingSkip)>, v: &[Version]) {
        self.pending.extend(q.into_iter().map(|(txn, skip)| ((txn, shard), skip)));
        self.versions.extend_from_slice(v);
    }

    /// Computes `t_snap` once all fast replies are in, then resolves skipped
    /// transactions whose commit is visible in another returned version.
    pub fn seal(&mut self) -> Timestamp {
        let t_snap = calculate_snapshot_ts(&self.keys, &self.versions);
        self.t_snap = Some(t_snap);
        let seen: BTreeMap<TxnId, Timestamp> = self
            .pending
            .keys()
            .filter_map(|(i, _)| {
                self.versions
                    .iter()
                    .find(|v| v.writer() == Some(*i))
                    .map(|v| (*i, v.t_c))
            })
            .collect();
        for (i, t_c) in seen {
            update_prepared(&mut self.pending, &mut self.versions, i, None, Decision::Commit(t_c), t_snap, &[]);
        }
        t_snap
    }

    pub fn check(&self) -> SnapshotCheck {
        let t_snap = self.t_snap.expect("sealed");
        check_snapshot(self.pending.values().map(|p| &p.t_p), t_snap)
    }

    pub fn apply_slow_reply(&mut self, shard: ShardId, txn: TxnId, decision: Decision, v: &[Version]) {
        let t_snap = self.t_snap.expect("sealed");
        update_prepared(&mut self.pending, &mut self.versions, txn, Some(shard), decision, t_snap, v);
    }

    pub fn result(&self) -> Vec<Version> {
        read_at_timestamp(&self.keys, &self.versions, self.t_snap.expect("sealed"))
    }
}
