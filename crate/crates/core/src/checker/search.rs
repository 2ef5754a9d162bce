//! Depth-first search for a legal total order under precedence constraints.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use crate::kv::Key;

use super::relations::RelationSet;
use super::replay::must_precede;
use super::Model;

pub const MAX_UNITS: usize = 128;

pub enum SearchResult {
    Found(Vec<usize>),
    /// The precedence constraints form a cycle through these units.
    Cycle(Vec<usize>),
    Exhausted,
    TimedOut,
}

/// Predecessor masks of the model's precedence constraints.
pub fn predecessors(rel: &RelationSet, model: Model) -> Vec<u128> {
    let n = rel.units.len();
    assert!(n <= MAX_UNITS, "search supports at most {MAX_UNITS} units");
    (0..n)
        .map(|b| (0..n).filter(|a| must_precede(rel, model, *a, b)).fold(0u128, |m, a| m | (1 << a)))
        .collect()
}

fn find_cycle(preds: &[u128]) -> Option<Vec<usize>> {
    let n = preds.len();
    // 0 unvisited, 1 on stack, 2 done
    let mut color = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();
    fn visit(u: usize, preds: &[u128], color: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        color[u] = 1;
        stack.push(u);
        for p in 0..preds.len() {
            if preds[u] & (1 << p) == 0 {
                continue;
            }
            if color[p] == 1 {
                let at = stack.iter().position(|x| *x == p).expect("on stack");
                let mut cyc: Vec<usize> = stack[at..].to_vec();
                cyc.reverse();
                return Some(cyc);
            }
            if color[p] == 0 {
                if let Some(c) = visit(p, preds, color, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        color[u] = 2;
        None
    }
    (0..n).find_map(|u| if color[u] == 0 { visit(u, preds, &mut color, &mut stack) } else { None })
}

struct Dfs<'a> {
    rel: &'a RelationSet,
    preds: Vec<u128>,
    keys: HashMap<Key, usize>,
    order: Vec<usize>,
    /// Last writer (unit index + 1) per key; 0 is the initial value.
    state: Vec<u32>,
    failed: HashSet<(u128, Vec<u32>)>,
    deadline: Instant,
    steps: u64,
    timed_out: bool,
}

impl Dfs<'_> {
    fn legal(&self, u: usize) -> bool {
        self.rel.units[u].reads.iter().all(|(k, w)| {
            let cur = self.state[self.keys[k]];
            match w {
                None => cur == 0,
                Some(t) => cur != 0 && self.rel.units[cur as usize - 1].id.txn == *t,
            }
        })
    }

    fn go(&mut self, placed: u128) -> bool {
        let n = self.rel.units.len();
        if self.order.len() == n {
            return true;
        }
        self.steps += 1;
        if self.steps % 1024 == 0 && Instant::now() > self.deadline {
            self.timed_out = true;
        }
        if self.timed_out || self.failed.contains(&(placed, self.state.clone())) {
            return false;
        }
        let mut ready: Vec<usize> = (0..n)
            .filter(|u| placed & (1 << u) == 0 && self.preds[*u] & !placed == 0)
            .collect();
        ready.sort_by_key(|u| (self.rel.units[*u].invoke_us, *u));
        for u in ready {
            if !self.legal(u) {
                continue;
            }
            let saved: Vec<(usize, u32)> = self.rel.units[u]
                .writes
                .iter()
                .map(|k| {
                    let i = self.keys[k];
                    (i, self.state[i])
                })
                .collect();
            for (i, _) in &saved {
                self.state[*i] = u as u32 + 1;
            }
            self.order.push(u);
            if self.go(placed | (1 << u)) {
                return true;
            }
            self.order.pop();
            for (i, old) in saved.into_iter().rev() {
                self.state[i] = old;
            }
            if self.timed_out {
                return false;
            }
        }
        self.failed.insert((placed, self.state.clone()));
        false
    }
}

pub fn search(rel: &RelationSet, model: Model, budget: Duration) -> SearchResult {
    let preds = predecessors(rel, model);
    if let Some(c) = find_cycle(&preds) {
        return SearchResult::Cycle(c);
    }
    let mut keys: HashMap<Key, usize> = HashMap::new();
    for u in &rel.units {
        for k in u.writes.iter().chain(u.reads.iter().map(|(k, _)| k)) {
            let next = keys.len();
            keys.entry(*k).or_insert(next);
        }
    }
    let mut dfs = Dfs {
        rel,
        preds,
        state: vec![0; keys.len()],
        keys,
        order: Vec::with_capacity(rel.units.len()),
        failed: HashSet::new(),
        deadline: Instant::now() + budget,
        steps: 0,
        timed_out: false,
    };
    if dfs.go(0) {
        SearchResult::Found(dfs.order)
    } else if dfs.timed_out {
        SearchResult::TimedOut
    } else {
        SearchResult::Exhausted
    }
}
