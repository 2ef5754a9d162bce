//! Brute-force reference for the checker: enumerate every order of the
//! units and test each against the model's definition directly.

use std::collections::{BTreeMap, BTreeSet};

use rsskv::checker::{EventKind, History, Model, Outcome, TxnType};
use rsskv::kv::{Key, TxnId};

#[derive(Clone, Debug, Default)]
struct Txn {
    process: u64,
    ty: Option<TxnType>,
    invoke: u64,
    respond: Option<u64>,
    outcome: Option<Outcome>,
    writes: Vec<Key>,
    reads: Vec<(Key, Option<TxnId>)>,
    sends: Vec<u64>,
    recvs: Vec<u64>,
}

#[derive(Clone, Debug)]
struct Node {
    txn: TxnId,
    kept: bool,
    is_write: bool,
    is_read: bool,
    reads: Vec<(Key, Option<TxnId>)>,
    writes: Vec<Key>,
    invoke: u64,
    respond: Option<u64>,
}

/// Accept or reject by exhaustive search. Panics if the history is not
/// well formed; the generator only builds well-formed ones.
pub fn verdict(history: &History, model: Model) -> bool {
    let mut txns: BTreeMap<TxnId, Txn> = BTreeMap::new();
    let mut order: Vec<TxnId> = Vec::new();
    for e in &history.events {
        let t = txns.entry(e.txn).or_default();
        match e.kind {
            EventKind::Invoke => {
                order.push(e.txn);
                t.process = e.process;
                t.ty = Some(e.txn_type);
                t.invoke = e.time_us;
                t.writes = e.writes.iter().map(|(k, _)| *k).collect();
                t.recvs = e.recvs.clone();
            }
            EventKind::Respond => {
                t.respond = Some(e.time_us);
                t.outcome = e.outcome;
                t.reads = e.reads.clone();
                t.sends = e.sends.clone();
            }
        }
    }
    let committed = |t: &Txn| t.respond.is_some() && t.outcome != Some(Outcome::Aborted);

    let mut read_from: BTreeSet<TxnId> = BTreeSet::new();
    for t in txns.values().filter(|t| committed(t)) {
        for (_, w) in &t.reads {
            if let Some(w) = w {
                if txns[w].outcome == Some(Outcome::Aborted) {
                    return false;
                }
                read_from.insert(*w);
            }
        }
    }
    let kept: BTreeSet<TxnId> = txns
        .iter()
        .filter(|(id, t)| committed(t) || (t.respond.is_none() && t.ty == Some(TxnType::Rw) && read_from.contains(id)))
        .map(|(id, _)| *id)
        .collect();

    // nodes: one per transaction, or one per operation for rsc
    let per_op = model == Model::Rsc;
    let mut nodes: Vec<Node> = Vec::new();
    let mut span: BTreeMap<TxnId, (usize, usize)> = BTreeMap::new();
    for id in &order {
        let t = &txns[id];
        let first = nodes.len();
        let base = Node {
            txn: *id,
            kept: kept.contains(id),
            is_write: false,
            is_read: false,
            reads: vec![],
            writes: vec![],
            invoke: t.invoke,
            respond: t.respond,
        };
        let ty = t.ty.expect("invoked");
        if per_op && ty != TxnType::Fence {
            for r in &t.reads {
                nodes.push(Node {
                    is_read: true,
                    reads: vec![*r],
                    ..base.clone()
                });
            }
            for k in &t.writes {
                nodes.push(Node {
                    is_write: true,
                    writes: vec![*k],
                    ..base.clone()
                });
            }
            if nodes.len() == first {
                nodes.push(base);
            }
        } else {
            nodes.push(Node {
                is_write: ty == TxnType::Rw,
                is_read: ty == TxnType::Ro,
                reads: t.reads.clone(),
                writes: t.writes.clone(),
                ..base
            });
        }
        span.insert(*id, (first, nodes.len() - 1));
    }

    // happens-before over every node, then restricted to kept ones
    let n = nodes.len();
    let mut hb = vec![vec![false; n]; n];
    for (_, (lo, hi)) in &span {
        for i in *lo..*hi {
            hb[i][i + 1] = true;
        }
    }
    let mut by_process: BTreeMap<u64, Vec<TxnId>> = BTreeMap::new();
    for id in &order {
        by_process.entry(txns[id].process).or_default().push(*id);
    }
    for list in by_process.values() {
        for w in list.windows(2) {
            hb[span[&w[0]].1][span[&w[1]].0] = true;
        }
    }
    for (a, ta) in &txns {
        for m in &ta.sends {
            for (b, tb) in &txns {
                if tb.recvs.contains(m) {
                    hb[span[a].1][span[b].0] = true;
                }
            }
        }
    }
    for (b, tb) in txns.iter().filter(|(_, t)| committed(t)) {
        for (k, w) in &tb.reads {
            let Some(w) = w else { continue };
            let (wlo, whi) = span[w];
            let from = (wlo..=whi).find(|i| nodes[*i].writes.contains(k)).unwrap_or(whi);
            let (blo, bhi) = span[b];
            let to = (blo..=bhi).find(|i| nodes[*i].reads.iter().any(|(rk, _)| rk == k)).unwrap_or(blo);
            hb[from][to] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if hb[i][k] {
                for j in 0..n {
                    if hb[k][j] {
                        hb[i][j] = true;
                    }
                }
            }
        }
    }

    let units: Vec<usize> = (0..n).filter(|i| nodes[*i].kept).collect();
    let before = |a: usize, b: usize| -> bool {
        if hb[a][b] {
            return true;
        }
        let (na, nb) = (&nodes[a], &nodes[b]);
        let rt = matches!(na.respond, Some(r) if r < nb.invoke);
        if !rt {
            return false;
        }
        match model {
            Model::Ss => true,
            Model::Rss | Model::Rsc => {
                na.is_write && (nb.is_write || (nb.is_read && nb.reads.iter().any(|(k, _)| na.writes.contains(k))))
            }
        }
    };
    let ok = |perm: &[usize]| -> bool {
        for i in 0..perm.len() {
            for j in i + 1..perm.len() {
                if before(perm[j], perm[i]) {
                    return false;
                }
            }
        }
        let mut state: BTreeMap<Key, TxnId> = BTreeMap::new();
        for u in perm {
            let node = &nodes[*u];
            if node.reads.iter().any(|(k, w)| state.get(k).copied() != *w) {
                return false;
            }
            for k in &node.writes {
                state.insert(*k, node.txn);
            }
        }
        true
    };
    any_permutation(units, &ok)
}

/// Heap's algorithm; stops at the first permutation satisfying `ok`.
fn any_permutation(mut items: Vec<usize>, ok: &dyn Fn(&[usize]) -> bool) -> bool {
    let n = items.len();
    if ok(&items) {
        return true;
    }
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            if ok(&items) {
                return true;
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    false
}
