//! Per-key read/write locks with wound-wait deadlock prevention.
//!
//! Age is the transaction's start timestamp; smaller is older. An older
//! requester wounds every younger conflicting holder that is not immune
//! (prepared transactions are immune); otherwise it queues. A request that
//! conflicts with no holder still queues behind an older conflicting waiter,
//! so readers cannot starve a queued writer. The table only reports victims;
//! the caller aborts them, which releases their locks.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::kv::{Key, TxnId};
use crate::timestamp::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LockMode {
    Read,
    Write,
}

pub type Age = (Timestamp, TxnId);

#[derive(Debug, Default)]
struct KeyLock {
    readers: BTreeSet<TxnId>,
    writer: Option<TxnId>,
    waiters: VecDeque<(TxnId, LockMode)>,
}

impl KeyLock {
    fn is_free(&self) -> bool {
        self.readers.is_empty() && self.writer.is_none() && self.waiters.is_empty()
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum Acquire {
    Granted,
    /// Queued. `wound` lists younger, non-immune holders the caller must abort.
    Wait { wound: Vec<TxnId> },
}

#[derive(Debug, Default)]
pub struct LockTable {
    keys: HashMap<Key, KeyLock>,
    ages: HashMap<TxnId, Age>,
    held: HashMap<TxnId, BTreeSet<Key>>,
}

impl LockTable {
    pub fn new() -> Self {
        LockTable::default()
    }

    pub fn register(&mut self, txn: TxnId, start: Timestamp) {
        self.ages.entry(txn).or_insert((start, txn));
    }

    pub fn age(&self, txn: TxnId) -> Option<Age> {
        self.ages.get(&txn).copied()
    }

    pub fn holds(&self, txn: TxnId, key: Key, mode: LockMode) -> bool {
        let Some(l) = self.keys.get(&key) else {
            return false;
        };
        match mode {
            LockMode::Write => l.writer == Some(txn),
            LockMode::Read => l.writer == Some(txn) || l.readers.contains(&txn),
        }
    }

    pub fn held_keys(&self, txn: TxnId) -> impl Iterator<Item = Key> + '_ {
        self.held.get(&txn).into_iter().flat_map(|s| s.iter().copied())
    }

    fn older_conflicting_waiter(&self, l: &KeyLock, txn: TxnId, mode: LockMode) -> bool {
        let age = self.ages.get(&txn).copied().unwrap_or((Timestamp::MAX, txn));
        l.waiters.iter().any(|(t, m)| {
            *t != txn
                && (mode == LockMode::Write || *m == LockMode::Write)
                && self.ages.get(t).is_some_and(|a| *a < age)
        })
    }

    fn conflicting(l: &KeyLock, txn: TxnId, mode: LockMode) -> Vec<TxnId> {
        let mut out: Vec<TxnId> = l.writer.filter(|w| *w != txn).into_iter().collect();
        if mode == LockMode::Write {
            out.extend(l.readers.iter().copied().filter(|r| *r != txn));
        }
        out
    }

    pub fn acquire(&mut self, txn: TxnId, key: Key, mode: LockMode, immune: impl Fn(TxnId) -> bool) -> Acquire {
        if self.holds(txn, key, mode) {
            return Acquire::Granted;
        }
        let age = self.ages.get(&txn).copied().unwrap_or((Timestamp::MAX, txn));
        let l = self.keys.entry(key).or_default();
        let conflicts = Self::conflicting(l, txn, mode);
        let l = &self.keys[&key];
        if conflicts.is_empty() && self.older_conflicting_waiter(l, txn, mode) {
            let l = self.keys.get_mut(&key).expect("entry exists");
            if !l.waiters.iter().any(|(t, _)| *t == txn) {
                l.waiters.push_back((txn, mode));
            }
            return Acquire::Wait { wound: Vec::new() };
        }
        let l = self.keys.get_mut(&key).expect("entry exists");
        if conflicts.is_empty() {
            // a read grant leaves a queued write request in place
            l.waiters.retain(|(t, m)| *t != txn || (mode == LockMode::Read && *m == LockMode::Write));
            match mode {
                LockMode::Read => {
                    l.readers.insert(txn);
                }
                LockMode::Write => {
                    l.readers.remove(&txn);
                    l.writer = Some(txn);
                }
            }
            self.held.entry(txn).or_default().insert(key);
            return Acquire::Granted;
        }
        if !l.waiters.iter().any(|(t, _)| *t == txn) {
            l.waiters.push_back((txn, mode));
        }
        let wound = conflicts
            .into_iter()
            .filter(|h| {
                let h_age = self.ages.get(h).copied().unwrap_or((Timestamp::MAX, *h));
                age < h_age && !immune(*h)
            })
            .collect();
        Acquire::Wait { wound }
    }

    /// Withdraws a queued request.
    pub fn cancel_wait(&mut self, txn: TxnId, key: Key) {
        if let Some(l) = self.keys.get_mut(&key) {
            l.waiters.retain(|(t, _)| *t != txn);
            if l.is_free() {
                self.keys.remove(&key);
            }
        }
    }

    /// Drops every lock and queued request of `txn`. Returns the keys whose
    /// holders or queues changed; their waiters should be retried.
    pub fn release_all(&mut self, txn: TxnId) -> Vec<Key> {
        let keys: Vec<Key> = self.held.remove(&txn).map(|s| s.into_iter().collect()).unwrap_or_default();
        for k in &keys {
            if let Some(l) = self.keys.get_mut(k) {
                l.readers.remove(&txn);
                if l.writer == Some(txn) {
                    l.writer = None;
                }
            }
        }
        let mut queued = Vec::new();
        for (k, l) in self.keys.iter_mut() {
            if l.waiters.iter().any(|(t, _)| *t == txn) {
                l.waiters.retain(|(t, _)| *t != txn);
                queued.push(*k);
            }
        }
        for k in keys.iter().chain(&queued) {
            if self.keys.get(k).is_some_and(KeyLock::is_free) {
                self.keys.remove(k);
            }
        }
        self.ages.remove(&txn);
        let mut changed = keys;
        changed.extend(queued);
        changed
    }

    pub fn waiters(&self, key: Key) -> Vec<(TxnId, LockMode)> {
        self.keys.get(&key).map(|l| l.waiters.iter().copied().collect()).unwrap_or_default()
    }

    /// Checks the structural invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (k, l) in &self.keys {
            if let Some(w) = l.writer {
                if l.readers.iter().any(|r| *r != w) {
                    return Err(format!("key {k}: writer {w} shares with readers"));
                }
            }
            for (t, m) in &l.waiters {
                if Self::conflicting(l, *t, *m).is_empty() && !self.older_conflicting_waiter(l, *t, *m) {
                    return Err(format!("key {k}: {t} queued with nothing ahead of it"));
                }
            }
        }
        Ok(())
    }
}
