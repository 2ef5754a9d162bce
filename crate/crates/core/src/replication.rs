//! Leader-based replicated log, one per shard.
//!
//! The leader ships each entry to its followers and treats it as committed
//! once a majority of replicas (itself included) hold it and every earlier
//! entry is committed. Followers only store entries and acknowledge them.
//!
//! Safe time is the largest committed entry timestamp. Under a leader lease
//! the leader may also raise it on demand with a local no-op entry: the no-op
//! is not shipped, commits immediately, and forces every later entry above it.

use crate::kv::{ShardId, TxnId};
use crate::simnet::NodeId;
use crate::timestamp::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Payload {
    Prepare(TxnId),
    Commit(TxnId),
    Noop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub index: u64,
    pub ts: Timestamp,
    pub payload: Payload,
}

/// Leader-to-follower replication message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Append {
    pub shard: ShardId,
    pub index: u64,
    pub ts: Timestamp,
}

/// Follower acknowledgement of every shipped entry up to `index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AppendAck {
    pub shard: ShardId,
    pub index: u64,
}

#[derive(Debug)]
pub struct ReplicatedLog {
    shard: ShardId,
    followers: Vec<NodeId>,
    entries: Vec<Entry>,
    /// Highest shipped index each follower acknowledged.
    acked: Vec<u64>,
    /// Number of committed entries (the committed prefix).
    committed: usize,
    max_write_ts: Timestamp,
    lease: bool,
}

impl ReplicatedLog {
    pub fn new(shard: ShardId, followers: Vec<NodeId>, lease: bool) -> Self {
        let n = followers.len();
        ReplicatedLog {
            shard,
            followers,
            entries: Vec::new(),
            acked: vec![0; n],
            committed: 0,
            max_write_ts: Timestamp::ZERO,
            lease,
        }
    }

    pub fn shard(&self) -> ShardId {
        self.shard
    }

    pub fn followers(&self) -> &[NodeId] {
        &self.followers
    }

    pub fn has_lease(&self) -> bool {
        self.lease
    }

    /// Largest timestamp assigned to any entry, committed or not.
    pub fn last_ts(&self) -> Timestamp {
        self.entries.last().map_or(Timestamp::ZERO, |e| e.ts)
    }

    pub fn max_write_ts(&self) -> Timestamp {
        self.max_write_ts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn committed_len(&self) -> usize {
        self.committed
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Replicas (leader included) that must hold an entry before it commits.
    pub fn majority(&self) -> usize {
        (self.followers.len() + 1) / 2 + 1
    }

    /// Appends an entry. Returns the messages to ship and any entries that
    /// committed immediately (always the case without followers).
    pub fn append(&mut self, ts: Timestamp, payload: Payload) -> (Vec<(NodeId, Append)>, Vec<Entry>) {
        assert!(
            ts > self.last_ts(),
            "log timestamps must increase: {ts} after {}",
            self.last_ts()
        );
        let index = self.entries.len() as u64 + 1;
        self.entries.push(Entry { index, ts, payload });
        let shipped = if matches!(payload, Payload::Noop) {
            Vec::new()
        } else {
            let msg = Append {
                shard: self.shard,
                index,
                ts,
            };
            self.followers.iter().map(|f| (*f, msg)).collect()
        };
        (shipped, self.advance())
    }

    pub fn on_ack(&mut self, from: NodeId, ack: AppendAck) -> Vec<Entry> {
        if let Some(i) = self.followers.iter().position(|f| *f == from) {
            self.acked[i] = self.acked[i].max(ack.index);
        }
        self.advance()
    }

    fn replicated(&self, e: &Entry) -> bool {
        if matches!(e.payload, Payload::Noop) {
            return true;
        }
        let copies = 1 + self.acked.iter().filter(|a| **a >= e.index).count();
        copies >= self.majority()
    }

    fn advance(&mut self) -> Vec<Entry> {
        let mut out = Vec::new();
        while let Some(e) = self.entries.get(self.committed) {
            if !self.replicated(e) {
                break;
            }
            self.max_write_ts = self.max_write_ts.max(e.ts);
            out.push(*e);
            self.committed += 1;
        }
        out
    }

    /// Safe-time wait. True if `t_read <= max_write_ts` holds on return; with
    /// the lease this always succeeds, appending a no-op above `t_read` if
    /// needed. Without it the caller must retry after later commits.
    pub fn advance_safe_time(&mut self, t_read: Timestamp, node: u32) -> bool {
        if t_read <= self.max_write_ts {
            return true;
        }
        if !self.lease {
            return false;
        }
        let ts = t_read.max(self.last_ts()).successor(node);
        self.entries.push(Entry {
            index: self.entries.len() as u64 + 1,
            ts,
            payload: Payload::Noop,
        });
        // The no-op is committed by the lease, independently of earlier entries.
        self.max_write_ts = self.max_write_ts.max(ts);
        if self.committed + 1 == self.entries.len() {
            self.committed += 1;
        }
        true
    }
}

/// A follower replica: stores entries and acknowledges them.
#[derive(Debug, Default)]
pub struct Follower {
    stored: Vec<(u64, Timestamp)>,
}

impl Follower {
    pub fn on_append(&mut self, a: Append) -> AppendAck {
        self.stored.push((a.index, a.ts));
        AppendAck {
            shard: a.shard,
            index: a.index,
        }
    }

    pub fn stored(&self) -> &[(u64, Timestamp)] {
        &self.stored
    }
}
