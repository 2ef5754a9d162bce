//! Consistency checking of recorded histories.
//!
//! A history is accepted under a model when some total order of its units is
//! legal for a key-value store and respects the model's precedence rules:
//!
//! - `Rss`: causal order, plus every completed read-write transaction
//!   precedes the read-write transactions and conflicting read-only
//!   transactions invoked after it responded.
//! - `Ss`: causal order plus full real-time order.
//! - `Rsc`: the `Rss` rules applied to individual reads and writes.
//!
//! Aborted transactions are dropped. An incomplete read-write transaction is
//! kept, with no response, only if some unit read from it.

pub mod history;
pub mod relations;
pub mod replay;
pub mod search;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use history::{EventKind, History, HistoryError, HistoryEvent, Outcome, TxnRecord, TxnType};
pub use relations::{derive, derive_relations, Granularity, RelationSet, Unit, UnitKind, UnitRef};
pub use replay::{replay_legal, validate_order};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Rss,
    Ss,
    Rsc,
}

impl Model {
    pub const ALL: [Model; 3] = [Model::Rss, Model::Ss, Model::Rsc];

    pub fn granularity(self) -> Granularity {
        match self {
            Model::Rsc => Granularity::Operation,
            _ => Granularity::Transaction,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Rss => "rss",
            Model::Ss => "ss",
            Model::Rsc => "rsc",
        })
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rss" => Ok(Model::Rss),
            "ss" => Ok(Model::Ss),
            "rsc" => Ok(Model::Rsc),
            other => Err(format!("unknown model {other:?}; expected rss, ss or rsc")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accepted { witness: Vec<UnitRef> },
    Rejected { note: String },
    Unknown { note: String },
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted { .. })
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Verdict::Rejected { .. })
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Verdict::Unknown { .. })
    }

    /// CLI exit code: 0 accept, 1 reject, 2 unknown.
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Accepted { .. } => 0,
            Verdict::Rejected { .. } => 1,
            Verdict::Unknown { .. } => 2,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accepted { witness } => {
                write!(f, "ACCEPT")?;
                if !witness.is_empty() {
                    let s: Vec<String> = witness.iter().map(|u| u.to_string()).collect();
                    write!(f, " witness: {}", s.join(" "))?;
                }
                Ok(())
            }
            Verdict::Rejected { note } => write!(f, "REJECT {note}"),
            Verdict::Unknown { note } => write!(f, "UNKNOWN {note}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckLimits {
    pub max_units: usize,
    pub time: Duration,
}

impl Default for CheckLimits {
    fn default() -> Self {
        CheckLimits {
            max_units: 12,
            time: Duration::from_secs(5),
        }
    }
}

pub fn check(history: &History, model: Model) -> Result<Verdict, HistoryError> {
    check_with(history, model, CheckLimits::default())
}

pub fn check_with(history: &History, model: Model, limits: CheckLimits) -> Result<Verdict, HistoryError> {
    let rel = derive(history, model.granularity())?;
    Ok(check_relations(&rel, model, limits))
}

pub fn check_relations(rel: &RelationSet, model: Model, limits: CheckLimits) -> Verdict {
    if let Some((r, w)) = rel.aborted_reads.first() {
        return Verdict::Rejected {
            note: format!("{r} reads a value written by aborted {w}"),
        };
    }
    let n = rel.units.len();
    let cap = limits.max_units.min(search::MAX_UNITS);
    if n > cap {
        return Verdict::Unknown {
            note: format!("{n} units exceed the search cap of {cap}"),
        };
    }
    match search::search(rel, model, limits.time) {
        search::SearchResult::Found(order) => {
            if let Err(e) = validate_order(rel, model, &order) {
                panic!("search produced an invalid witness: {e}");
            }
            Verdict::Accepted {
                witness: order.iter().map(|i| rel.units[*i].id).collect(),
            }
        }
        search::SearchResult::Cycle(c) => {
            let names: Vec<String> = c.iter().map(|i| rel.units[*i].id.to_string()).collect();
            Verdict::Rejected {
                note: format!("precedence cycle {} -> {}", names.join(" -> "), names[0]),
            }
        }
        search::SearchResult::Exhausted => Verdict::Rejected {
            note: format!("no legal order of {n} units respects the {model} constraints"),
        },
        search::SearchResult::TimedOut => Verdict::Unknown {
            note: format!("search exceeded {:?}", limits.time),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::{Key, TxnId, Value};

    fn val(w: u64, k: Key) -> Value {
        Value {
            writer: TxnId(w),
            key: k,
            counter: 0,
        }
    }

    fn inv(id: u64, p: u64, t: TxnType, at: u64) -> HistoryEvent {
        HistoryEvent::invoke(TxnId(id), p, "kv", t, at)
    }

    fn resp(id: u64, p: u64, t: TxnType, at: u64) -> HistoryEvent {
        HistoryEvent::respond(TxnId(id), p, "kv", t, at)
    }

    /// The writer commits x and y; one reader sees the write at x before the
    /// writer finishes, and a later reader's read of y returns the old value.
    fn litmus() -> History {
        let (x, y) = (1, 2);
        History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x)), (y, val(1, y))]),
            inv(2, 1, TxnType::Ro, 20),
            resp(2, 1, TxnType::Ro, 40).with_reads(vec![(x, Some(TxnId(1)))]),
            inv(3, 2, TxnType::Ro, 50),
            resp(3, 2, TxnType::Ro, 60).with_reads(vec![(y, None)]),
            resp(1, 0, TxnType::Rw, 100),
        ])
    }

    #[test]
    fn empty_history_is_accepted() {
        for m in Model::ALL {
            assert!(check(&History::default(), m).unwrap().is_accepted());
        }
    }

    #[test]
    fn litmus_rss_accepts_ss_rejects() {
        let h = litmus();
        assert!(check(&h, Model::Rss).unwrap().is_accepted());
        assert!(check(&h, Model::Ss).unwrap().is_rejected());
    }

    #[test]
    fn own_write_then_stale_read_is_rejected() {
        let x = 1;
        let h = History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x))]),
            resp(1, 0, TxnType::Rw, 10),
            inv(2, 0, TxnType::Ro, 20),
            resp(2, 0, TxnType::Ro, 30).with_reads(vec![(x, None)]),
        ]);
        for m in Model::ALL {
            assert!(check(&h, m).unwrap().is_rejected(), "{m}");
        }
    }

    #[test]
    fn unrelated_readers_may_disagree_under_rss() {
        // a concurrent write seen by one reader and missed by a later one
        let x = 1;
        let h = History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x))]),
            inv(2, 1, TxnType::Ro, 10),
            resp(2, 1, TxnType::Ro, 20).with_reads(vec![(x, Some(TxnId(1)))]),
            inv(3, 2, TxnType::Ro, 30),
            resp(3, 2, TxnType::Ro, 40).with_reads(vec![(x, None)]),
            resp(1, 0, TxnType::Rw, 50),
        ]);
        assert!(check(&h, Model::Rss).unwrap().is_accepted());
        assert!(check(&h, Model::Ss).unwrap().is_rejected());
    }

    #[test]
    fn completed_write_must_be_seen_by_conflicting_reader() {
        let x = 1;
        let h = History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x))]),
            resp(1, 0, TxnType::Rw, 10),
            inv(2, 1, TxnType::Ro, 20),
            resp(2, 1, TxnType::Ro, 30).with_reads(vec![(x, None)]),
        ]);
        assert!(check(&h, Model::Rss).unwrap().is_rejected());
        assert!(check(&h, Model::Rsc).unwrap().is_rejected());
    }

    #[test]
    fn same_key_in_two_services_is_two_objects() {
        let x = 1;
        let on = |e: HistoryEvent, svc: &str| HistoryEvent { service: svc.into(), ..e };
        let h = History::new(vec![
            on(inv(1, 0, TxnType::Rw, 0), "a").with_writes(vec![(x, val(1, x))]),
            on(resp(1, 0, TxnType::Rw, 10), "a"),
            on(inv(2, 1, TxnType::Ro, 20), "b"),
            on(resp(2, 1, TxnType::Ro, 30), "b").with_reads(vec![(x, None)]),
        ]);
        for m in Model::ALL {
            assert!(check(&h, m).unwrap().is_accepted(), "{m}");
        }
    }

    #[test]
    fn equal_times_are_concurrent() {
        let x = 1;
        let h = History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x))]),
            resp(1, 0, TxnType::Rw, 10),
            inv(2, 1, TxnType::Ro, 10),
            resp(2, 1, TxnType::Ro, 30).with_reads(vec![(x, None)]),
        ]);
        assert!(check(&h, Model::Ss).unwrap().is_accepted());
    }

    #[test]
    fn aborted_writer_read_is_rejected_and_aborts_are_dropped() {
        let x = 1;
        let mut h = History::new(vec![
            inv(1, 0, TxnType::Rw, 0).with_writes(vec![(x, val(1, x))]),
            resp(1, 0, TxnType::Rw, 10).with_outcome(Outcome::Aborted),
            inv(2, 1, TxnType::Ro, 20),
            resp(2, 1, TxnType::Ro, 30).with_reads(vec![(x, None)]),
        ]);
        assert!(check(&h, Model::Ss).unwrap().is_accepted());
        h.events[3].reads = vec![(x, Some(TxnId(1)))];
        assert!(check(&h, Model::Rss).unwrap().is_rejected());
    }

    #[test]
    fn cap_gives_unknown() {
        let mut h = History::default();
        for i in 0..13 {
            h.push(inv(i, i, TxnType::Ro, 0));
            h.push(resp(i, i, TxnType::Ro, 1));
        }
        assert_eq!(check(&h, Model::Rss).unwrap().exit_code(), 2);
        let big = CheckLimits {
            max_units: 20,
            ..CheckLimits::default()
        };
        assert!(check_with(&h, Model::Rss, big).unwrap().is_accepted());
    }
}
