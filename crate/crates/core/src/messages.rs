//! Simulated wire messages and timer payloads.

use crate::kv::{Key, ShardId, TxnId, Value, Version};
use crate::librss::CausalContext;
use crate::replication::{Append, AppendAck};
use crate::simnet::{Message, NodeId};
use crate::timestamp::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RoId(pub u64);

/// One participant of a read-write transaction, as sent to the coordinator.
#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub shard: ShardId,
    pub node: NodeId,
    pub reads: Vec<Key>,
    pub writes: Vec<(Key, Value)>,
}

/// A prepared transaction an RO skipped, with its buffered writes to the RO's keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub txn: TxnId,
    pub t_p: Timestamp,
    pub writes: Vec<(Key, Value)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Commit(Timestamp),
    Abort,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Msg {
    Read {
        txn: TxnId,
        start: Timestamp,
        key: Key,
    },
    ReadReply {
        txn: TxnId,
        version: Version,
    },
    /// The transaction lost a lock it needed and is aborted at the sending shard.
    Wounded {
        txn: TxnId,
    },
    Abort {
        txn: TxnId,
    },
    Commit {
        txn: TxnId,
        start: Timestamp,
        t_ee: Timestamp,
        parts: Vec<Part>,
    },
    Prepare {
        txn: TxnId,
        start: Timestamp,
        t_ee: Timestamp,
        reads: Vec<Key>,
        writes: Vec<(Key, Value)>,
    },
    PrepareOk {
        txn: TxnId,
        shard: ShardId,
        t_p: Timestamp,
        t_ee: Timestamp,
    },
    PrepareFail {
        txn: TxnId,
        shard: ShardId,
    },
    Decide {
        txn: TxnId,
        decision: Decision,
    },
    CommitReply {
        txn: TxnId,
        /// `Some((t_c, max t_ee over participants))` on commit.
        outcome: Option<(Timestamp, Timestamp)>,
    },
    ROCommit {
        ro: RoId,
        keys: Vec<Key>,
        t_read: Timestamp,
        t_min: Timestamp,
    },
    ROFastReply {
        ro: RoId,
        shard: ShardId,
        q: Vec<Skipped>,
        v: Vec<Version>,
    },
    ROSlowReply {
        ro: RoId,
        shard: ShardId,
        txn: TxnId,
        decision: Decision,
        v: Vec<Version>,
    },
    Append(Append),
    AppendAck(AppendAck),
    /// Application-level message between client processes.
    Signal {
        id: u64,
        ctx: Option<CausalContext>,
    },
    Timer(Timer),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    LockTimeout { txn: TxnId, key: Key },
    CommitWait { txn: TxnId },
    /// Client-side: resume the session's state machine.
    Wake { epoch: u64 },
    SessionArrival,
}

impl Message for Msg {
    fn label(&self) -> &'static str {
        match self {
            Msg::Read { .. } => "Read",
            Msg::ReadReply { .. } => "ReadReply",
            Msg::Wounded { .. } => "Wounded",
            Msg::Abort { .. } => "Abort",
            Msg::Commit { .. } => "Commit",
            Msg::Prepare { .. } => "Prepare",
            Msg::PrepareOk { .. } => "PrepareOk",
            Msg::PrepareFail { .. } => "PrepareFail",
            Msg::Decide { .. } => "Decide",
            Msg::CommitReply { .. } => "CommitReply",
            Msg::ROCommit { .. } => "ROCommit",
            Msg::ROFastReply { .. } => "ROFastReply",
            Msg::ROSlowReply { .. } => "ROSlowReply",
            Msg::Append(_) => "Append",
            Msg::AppendAck(_) => "AppendAck",
            Msg::Signal { .. } => "Signal",
            Msg::Timer(_) => "Timer",
        }
    }
}

/// Message types that belong to read-write transactions.
pub const RW_LABELS: &[&str] = &[
    "Read",
    "ReadReply",
    "Wounded",
    "Abort",
    "Commit",
    "Prepare",
    "PrepareOk",
    "PrepareFail",
    "Decide",
    "CommitReply",
    "Append",
    "AppendAck",
];

/// Message types that belong to read-only transactions.
pub const RO_LABELS: &[&str] = &["ROCommit", "ROFastReply", "ROSlowReply"];
