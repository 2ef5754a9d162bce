//! Sequential legality against the key-value specification, and independent
//! re-validation of a witness order.

use std::collections::HashMap;

use crate::kv::{Key, TxnId};

use super::relations::{RelationSet, Unit};
use super::Model;

/// Replays units in order against an in-memory map. Every read must observe
/// the latest preceding write to its key, or the initial value if none.
/// A unit's reads happen before its own writes.
pub fn replay_legal<'a>(seq: impl IntoIterator<Item = &'a Unit>) -> bool {
    let mut state: HashMap<Key, TxnId> = HashMap::new();
    for u in seq {
        if u.reads.iter().any(|(k, w)| state.get(k).copied() != *w) {
            return false;
        }
        for k in &u.writes {
            state.insert(*k, u.id.txn);
        }
    }
    true
}

/// Whether the model requires unit `a` to precede unit `b`, apart from causality.
pub fn realtime_constraint(rel: &RelationSet, model: Model, a: usize, b: usize) -> bool {
    use super::relations::UnitKind::*;
    if !rel.realtime(a, b) {
        return false;
    }
    let (ua, ub) = (&rel.units[a], &rel.units[b]);
    match model {
        Model::Ss => true,
        Model::Rss | Model::Rsc => ua.kind == Write && (ub.kind == Write || (ub.kind == Read && ua.conflicts_with(ub))),
    }
}

pub fn must_precede(rel: &RelationSet, model: Model, a: usize, b: usize) -> bool {
    a != b && (rel.causally_precedes(a, b) || realtime_constraint(rel, model, a, b))
}

/// Checks a complete order of unit indices against legality and every
/// pairwise constraint of the model.
pub fn validate_order(rel: &RelationSet, model: Model, order: &[usize]) -> Result<(), String> {
    let n = rel.units.len();
    let mut pos = vec![usize::MAX; n];
    for (i, u) in order.iter().enumerate() {
        if *u >= n || pos[*u] != usize::MAX {
            return Err(format!("order is not a permutation at position {i}"));
        }
        pos[*u] = i;
    }
    if order.len() != n {
        return Err("order does not cover every unit".into());
    }
    if !replay_legal(order.iter().map(|i| &rel.units[*i])) {
        return Err("order is not legal".into());
    }
    for a in 0..n {
        for b in 0..n {
            if must_precede(rel, model, a, b) && pos[a] > pos[b] {
                return Err(format!("{} must precede {}", rel.units[a].id, rel.units[b].id));
            }
        }
    }
    Ok(())
}
