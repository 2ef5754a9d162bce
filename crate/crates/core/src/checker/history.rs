//! Recorded histories: one JSON object per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{Key, TxnId, Value};
use crate::timestamp::{Micros, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Invoke,
    Respond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnType {
    Ro,
    Rw,
    Fence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Committed,
    Aborted,
}

/// One invocation or response.
///
/// Writes travel on the invocation, observed reads on the response. `sends`
/// lists application messages the process sent after this response; `recvs`
/// lists messages it received before this invocation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub kind: EventKind,
    pub txn: TxnId,
    pub process: u64,
    pub service: String,
    pub txn_type: TxnType,
    pub time_us: Micros,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub writes: Vec<(Key, Value)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reads: Vec<(Key, Option<TxnId>)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sends: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recvs: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    /// Protocol timestamps, informational only: `t_c` on read-write
    /// responses, `t_read`, `t_min` and `t_snap` on read-only responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_c: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_read: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_snap: Option<Timestamp>,
}

impl HistoryEvent {
    pub fn invoke(txn: TxnId, process: u64, service: &str, txn_type: TxnType, time_us: Micros) -> Self {
        HistoryEvent {
            kind: EventKind::Invoke,
            txn,
            process,
            service: service.to_string(),
            txn_type,
            time_us,
            writes: Vec::new(),
            reads: Vec::new(),
            sends: Vec::new(),
            recvs: Vec::new(),
            outcome: None,
            t_c: None,
            t_read: None,
            t_min: None,
            t_snap: None,
        }
    }

    pub fn respond(txn: TxnId, process: u64, service: &str, txn_type: TxnType, time_us: Micros) -> Self {
        HistoryEvent {
            kind: EventKind::Respond,
            outcome: Some(Outcome::Committed),
            ..Self::invoke(txn, process, service, txn_type, time_us)
        }
    }

    pub fn with_writes(mut self, writes: Vec<(Key, Value)>) -> Self {
        self.writes = writes;
        self
    }

    pub fn with_reads(mut self, reads: Vec<(Key, Option<TxnId>)>) -> Self {
        self.reads = reads;
        self
    }

    pub fn with_outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = Some(outcome);
        self
    }

    pub fn with_commit(mut self, t_c: Timestamp) -> Self {
        self.t_c = Some(t_c);
        self
    }

    pub fn with_snapshot(mut self, t_read: Timestamp, t_min: Timestamp, t_snap: Timestamp) -> Self {
        self.t_read = Some(t_read);
        self.t_min = Some(t_min);
        self.t_snap = Some(t_snap);
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("process {process}: {msg}")]
    IllFormed { process: u64, msg: String },
    #[error("{txn} reads a value written by {writer}, which is not in the history")]
    UnknownWriter { txn: TxnId, writer: TxnId },
}

/// An ordered event list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<HistoryEvent>,
}

/// A transaction assembled from its invocation and optional response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub txn: TxnId,
    pub process: u64,
    pub service: String,
    pub txn_type: TxnType,
    pub invoke_us: Micros,
    pub respond_us: Option<Micros>,
    pub outcome: Option<Outcome>,
    pub writes: Vec<(Key, Value)>,
    pub reads: Vec<(Key, Option<TxnId>)>,
    pub sends: Vec<u64>,
    pub recvs: Vec<u64>,
}

impl TxnRecord {
    pub fn is_complete(&self) -> bool {
        self.respond_us.is_some()
    }

    pub fn committed(&self) -> bool {
        self.outcome == Some(Outcome::Committed)
    }
}

impl History {
    pub fn new(events: Vec<HistoryEvent>) -> Self {
        History { events }
    }

    pub fn push(&mut self, e: HistoryEvent) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            writeln!(s, "{}", serde_json::to_string(e).expect("serializable")).expect("string write");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, HistoryError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(line).map_err(|err| HistoryError::Parse {
                line: i + 1,
                msg: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(History { events })
    }

    /// Pairs invocations with responses, in invocation order, checking that
    /// each process alternates invoke and respond.
    pub fn transactions(&self) -> Result<Vec<TxnRecord>, HistoryError> {
        let mut out: Vec<TxnRecord> = Vec::new();
        let mut open: BTreeMap<u64, usize> = BTreeMap::new();
        let mut seen: BTreeMap<TxnId, usize> = BTreeMap::new();
        for e in &self.events {
            let bad = |msg: String| HistoryError::IllFormed {
                process: e.process,
                msg,
            };
            match e.kind {
                EventKind::Invoke => {
                    if let Some(i) = open.get(&e.process) {
                        return Err(bad(format!("{} invoked while {} is outstanding", e.txn, out[*i].txn)));
                    }
                    if seen.contains_key(&e.txn) {
                        return Err(bad(format!("{} invoked twice", e.txn)));
                    }
                    seen.insert(e.txn, out.len());
                    open.insert(e.process, out.len());
                    out.push(TxnRecord {
                        txn: e.txn,
                        process: e.process,
                        service: e.service.clone(),
                        txn_type: e.txn_type,
                        invoke_us: e.time_us,
                        respond_us: None,
                        outcome: None,
                        writes: e.writes.clone(),
                        reads: Vec::new(),
                        sends: Vec::new(),
                        recvs: e.recvs.clone(),
                    });
                }
                EventKind::Respond => {
                    let i = match open.remove(&e.process) {
                        Some(i) if out[i].txn == e.txn => i,
                        _ => return Err(bad(format!("response for {} without a matching invocation", e.txn))),
                    };
                    let r = &mut out[i];
                    if e.time_us < r.invoke_us {
                        return Err(bad(format!("{} responds before it was invoked", e.txn)));
                    }
                    r.respond_us = Some(e.time_us);
                    r.outcome = Some(e.outcome.unwrap_or(Outcome::Committed));
                    r.reads = e.reads.clone();
                    r.sends = e.sends.clone();
                }
            }
        }
        Ok(out)
    }
}
