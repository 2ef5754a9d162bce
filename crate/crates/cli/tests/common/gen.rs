//! Random well-formed histories over a few keys and processes.

use rand::Rng;

use rsskv::checker::{History, HistoryEvent, Outcome, TxnType};
use rsskv::kv::{Key, TxnId, Value};

struct Plan {
    id: u64,
    process: u64,
    ty: TxnType,
    invoke: u64,
    respond: Option<u64>,
    aborted: bool,
    reads: Vec<Key>,
    writes: Vec<Key>,
}

/// At most `max_txns` transactions and `max_ops` reads plus writes (a fence
/// counts as one), spread over up to three processes and three keys.
pub fn history(rng: &mut impl Rng, max_txns: usize, max_ops: usize) -> History {
    let processes = rng.random_range(1..=3u64);
    let keys = rng.random_range(1..=3u64);
    let mut budget = max_ops;
    let mut plans: Vec<Plan> = Vec::new();
    let mut clock = vec![0u64; processes as usize];
    let n = rng.random_range(1..=max_txns);
    for i in 0..n {
        if budget == 0 {
            break;
        }
        let process = rng.random_range(0..processes);
        let roll = rng.random_range(0..10);
        let (ty, reads, writes) = if roll < 5 {
            let w = rng.random_range(1..=2usize.min(budget));
            let r = rng.random_range(0..=1usize.min(budget - w));
            (TxnType::Rw, pick(rng, keys, r), pick(rng, keys, w))
        } else if roll < 9 {
            let r = rng.random_range(1..=2usize.min(budget));
            (TxnType::Ro, pick(rng, keys, r), vec![])
        } else {
            (TxnType::Fence, vec![], vec![])
        };
        budget -= (reads.len() + writes.len()).max(1);
        let c = &mut clock[process as usize];
        let invoke = *c + rng.random_range(0..3) * 10;
        let respond = invoke + rng.random_range(1..4) * 10;
        *c = respond;
        plans.push(Plan {
            id: i as u64 + 1,
            process,
            ty,
            invoke,
            respond: Some(respond),
            aborted: ty == TxnType::Rw && rng.random_bool(0.1),
            reads,
            writes,
        });
    }
    // the last transaction of a process may stay incomplete
    for p in 0..processes {
        if let Some(last) = plans.iter_mut().rev().find(|t| t.process == p) {
            if last.ty != TxnType::Fence && !last.aborted && rng.random_bool(0.15) {
                last.respond = None;
            }
        }
    }

    let writers: Vec<(u64, Key)> = plans
        .iter()
        .filter(|t| t.ty == TxnType::Rw)
        .flat_map(|t| t.writes.iter().map(move |k| (t.id, *k)))
        .collect();
    let mut events: Vec<(u64, usize, HistoryEvent)> = Vec::new();
    let mut counter = 0u32;
    let mut msg = 0u64;
    let mut seq = 0usize;
    let mut push = |events: &mut Vec<(u64, usize, HistoryEvent)>, at: u64, e: HistoryEvent| {
        events.push((at, seq, e));
        seq += 1;
    };
    let mut sends: Vec<(usize, u64, u64)> = Vec::new();
    for (i, t) in plans.iter().enumerate() {
        let id = TxnId(t.id);
        let inv = HistoryEvent::invoke(id, t.process, "kv", t.ty, t.invoke).with_writes(
            t.writes
                .iter()
                .map(|k| {
                    counter += 1;
                    (*k, Value { writer: id, key: *k, counter })
                })
                .collect(),
        );
        push(&mut events, t.invoke, inv);
        let Some(respond) = t.respond else { continue };
        let mut resp = HistoryEvent::respond(id, t.process, "kv", t.ty, respond);
        if t.aborted {
            resp = resp.with_outcome(Outcome::Aborted);
        } else {
            let reads = t
                .reads
                .iter()
                .map(|k| {
                    let options: Vec<u64> = writers.iter().filter(|(w, wk)| wk == k && *w != t.id).map(|(w, _)| *w).collect();
                    let choice = rng.random_range(0..=options.len());
                    (*k, options.get(choice).map(|w| TxnId(*w)))
                })
                .collect();
            resp = resp.with_reads(reads);
        }
        if rng.random_bool(0.3) {
            msg += 1;
            resp.sends.push(msg);
            sends.push((i, msg, respond));
        }
        push(&mut events, respond, resp);
    }
    // deliver each message to a later invocation on another process
    for (from, m, at) in sends {
        let sender = plans[from].process;
        let targets: Vec<usize> = events
            .iter()
            .enumerate()
            .filter(|(_, (t, _, e))| *t > at && e.process != sender && e.kind == rsskv::checker::EventKind::Invoke)
            .map(|(i, _)| i)
            .collect();
        if !targets.is_empty() {
            let pick = targets[rng.random_range(0..targets.len())];
            events[pick].2.recvs.push(m);
        }
    }
    events.sort_by_key(|(t, s, _)| (*t, *s));
    History::new(events.into_iter().map(|(_, _, e)| e).collect())
}

fn pick(rng: &mut impl Rng, keys: u64, n: usize) -> Vec<Key> {
    let mut out: Vec<Key> = Vec::new();
    while out.len() < n.min(keys as usize) {
        let k = rng.random_range(0..keys);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}
