//! Units of serialization and the order relations between them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::kv::{Key, TxnId};
use crate::timestamp::Micros;

use super::history::{History, HistoryError, TxnRecord, TxnType};

/// Square bit matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        BitMatrix {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] & (1 << (j % 64)) != 0
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    pub fn transitive_closure(&mut self) {
        for k in 0..self.n {
            for i in 0..self.n {
                if i != k && self.get(i, k) {
                    for w in 0..self.words {
                        let v = self.bits[k * self.words + w];
                        self.bits[i * self.words + w] |= v;
                    }
                }
            }
        }
    }

    pub fn is_irreflexive(&self) -> bool {
        (0..self.n).all(|i| !self.get(i, i))
    }
}

/// Serialization granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Transaction,
    /// Every read and write is its own unit.
    Operation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnitKind {
    /// A read-write transaction, or a single write.
    Write,
    /// A read-only transaction, or a single read.
    Read,
    Fence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitRef {
    pub txn: TxnId,
    /// Operation index within the transaction, at operation granularity.
    pub op: Option<u16>,
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            None => write!(f, "{}", self.txn),
            Some(i) => write!(f, "{}.{}", self.txn, i),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unit {
    pub id: UnitRef,
    pub process: u64,
    pub service: String,
    pub kind: UnitKind,
    pub invoke_us: Micros,
    /// `None` for an incomplete write that something read from.
    pub respond_us: Option<Micros>,
    pub reads: Vec<(Key, Option<TxnId>)>,
    pub writes: Vec<Key>,
}

impl Unit {
    /// Strict real-time precedence on recorded times.
    pub fn precedes_in_real_time(&self, other: &Unit) -> bool {
        matches!(self.respond_us, Some(r) if r < other.invoke_us)
    }

    pub fn conflicts_with(&self, reader: &Unit) -> bool {
        reader.reads.iter().any(|(k, _)| self.writes.contains(k))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSet {
    pub units: Vec<Unit>,
    /// Transitively closed causal order.
    pub causal: BitMatrix,
    /// Writer unit to the read units that read a key it writes.
    pub conflicts: BTreeMap<usize, BTreeSet<usize>>,
    /// `(reader, writer)` pairs where the writer aborted.
    pub aborted_reads: Vec<(TxnId, TxnId)>,
}

impl RelationSet {
    pub fn realtime(&self, a: usize, b: usize) -> bool {
        self.units[a].precedes_in_real_time(&self.units[b])
    }

    pub fn causally_precedes(&self, a: usize, b: usize) -> bool {
        self.causal.get(a, b)
    }
}

/// Derives units and relations at transaction granularity.
pub fn derive_relations(history: &History) -> Result<RelationSet, HistoryError> {
    derive(history, Granularity::Transaction)
}

pub fn derive(history: &History, granularity: Granularity) -> Result<RelationSet, HistoryError> {
    let txns = history.transactions()?;
    let by_id: HashMap<TxnId, &TxnRecord> = txns.iter().map(|t| (t.txn, t)).collect();

    let mut aborted_reads = Vec::new();
    let mut read_from: BTreeSet<TxnId> = BTreeSet::new();
    for t in txns.iter().filter(|t| t.committed()) {
        for (_, w) in &t.reads {
            let Some(w) = w else { continue };
            match by_id.get(w) {
                None => return Err(HistoryError::UnknownWriter { txn: t.txn, writer: *w }),
                Some(wt) if wt.outcome == Some(super::history::Outcome::Aborted) => aborted_reads.push((t.txn, *w)),
                Some(_) => {
                    read_from.insert(*w);
                }
            }
        }
    }
    let kept = |t: &TxnRecord| match t.outcome {
        Some(super::history::Outcome::Committed) => true,
        Some(super::history::Outcome::Aborted) => false,
        None => t.txn_type == TxnType::Rw && read_from.contains(&t.txn),
    };

    // keys of different services are distinct objects; with one service
    // the recorded keys are kept as they are
    let services: BTreeSet<&str> = txns.iter().map(|t| t.service.as_str()).collect();
    let mut interned: HashMap<(String, Key), Key> = HashMap::new();
    let mut qualify = |service: &str, k: Key| -> Key {
        if services.len() <= 1 {
            return k;
        }
        let next = interned.len() as Key;
        *interned.entry((service.to_string(), k)).or_insert(next)
    };

    // units of each transaction, in process order within it
    let mut units: Vec<Unit> = Vec::new();
    let mut of_txn: HashMap<TxnId, (usize, usize)> = HashMap::new();
    for t in txns.iter().filter(|t| kept(t)) {
        let first = units.len();
        let base = Unit {
            id: UnitRef { txn: t.txn, op: None },
            process: t.process,
            service: t.service.clone(),
            kind: match t.txn_type {
                TxnType::Rw => UnitKind::Write,
                TxnType::Ro => UnitKind::Read,
                TxnType::Fence => UnitKind::Fence,
            },
            invoke_us: t.invoke_us,
            respond_us: t.respond_us,
            reads: Vec::new(),
            writes: Vec::new(),
        };
        match granularity {
            Granularity::Operation if t.txn_type != TxnType::Fence => {
                let mut op = 0u16;
                for (k, w) in &t.reads {
                    units.push(Unit {
                        id: UnitRef { txn: t.txn, op: Some(op) },
                        kind: UnitKind::Read,
                        reads: vec![(qualify(&t.service, *k), *w)],
                        ..base.clone()
                    });
                    op += 1;
                }
                for (k, _) in &t.writes {
                    units.push(Unit {
                        id: UnitRef { txn: t.txn, op: Some(op) },
                        kind: UnitKind::Write,
                        writes: vec![qualify(&t.service, *k)],
                        ..base.clone()
                    });
                    op += 1;
                }
            }
            _ => units.push(Unit {
                reads: t.reads.iter().map(|(k, w)| (qualify(&t.service, *k), *w)).collect(),
                writes: t.writes.iter().map(|(k, _)| qualify(&t.service, *k)).collect(),
                ..base
            }),
        }
        if units.len() > first {
            of_txn.insert(t.txn, (first, units.len()));
        }
    }

    let n = units.len();
    let mut causal = BitMatrix::new(n);

    // process order, including operations inside a transaction
    let mut by_process: BTreeMap<u64, Vec<&TxnRecord>> = BTreeMap::new();
    for t in &txns {
        by_process.entry(t.process).or_default().push(t);
    }
    let mut sends: HashMap<u64, usize> = HashMap::new();
    let mut recvs: Vec<(u64, usize)> = Vec::new();
    for list in by_process.values() {
        let mut prev: Option<usize> = None;
        let mut pending_recvs: Vec<u64> = Vec::new();
        for t in list {
            pending_recvs.extend(&t.recvs);
            if let Some(&(lo, hi)) = of_txn.get(&t.txn) {
                if let Some(p) = prev {
                    causal.set(p, lo);
                }
                for u in lo..hi.saturating_sub(1) {
                    causal.set(u, u + 1);
                }
                for m in pending_recvs.drain(..) {
                    recvs.push((m, lo));
                }
                prev = Some(hi - 1);
            }
            if let Some(p) = prev {
                for m in &t.sends {
                    sends.insert(*m, p);
                }
            }
        }
    }
    for (m, to) in recvs {
        if let Some(from) = sends.get(&m) {
            causal.set(*from, to);
        }
    }

    // reads-from
    let mut write_unit: HashMap<(TxnId, Key), usize> = HashMap::new();
    for (i, u) in units.iter().enumerate() {
        for k in &u.writes {
            write_unit.insert((u.id.txn, *k), i);
        }
    }
    for (i, u) in units.iter().enumerate() {
        for (k, w) in &u.reads {
            if let Some(w) = w {
                if *w == u.id.txn {
                    continue;
                }
                if let Some(j) = write_unit.get(&(*w, *k)) {
                    causal.set(*j, i);
                }
            }
        }
    }
    causal.transitive_closure();

    let mut conflicts: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, w) in units.iter().enumerate().filter(|(_, u)| u.kind == UnitKind::Write) {
        for (j, r) in units.iter().enumerate().filter(|(_, u)| u.kind == UnitKind::Read) {
            if w.conflicts_with(r) {
                conflicts.entry(i).or_default().insert(j);
            }
        }
    }

    Ok(RelationSet {
        units,
        causal,
        conflicts,
        aborted_reads,
    })
}
