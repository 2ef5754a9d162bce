use std::collections::HashMap;

use crate::kv::{Key, Value, Version};
use crate::timestamp::Timestamp;

/// Multi-versioned storage. Versions are never garbage collected, so the
/// store doubles as the committed version log used by audits.
#[derive(Debug, Default, Clone)]
pub struct Store {
    versions: HashMap<Key, Vec<Version>>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Latest version of `key` with `t_c <= ts`, or the initial version.
    pub fn read_at(&self, key: Key, ts: Timestamp) -> Version {
        let Some(vs) = self.versions.get(&key) else {
            return Version::initial(key);
        };
        let n = vs.partition_point(|v| v.t_c <= ts);
        if n == 0 {
            Version::initial(key)
        } else {
            vs[n - 1]
        }
    }

    pub fn latest(&self, key: Key) -> Version {
        self.read_at(key, Timestamp::MAX)
    }

    pub fn apply(&mut self, key: Key, t_c: Timestamp, value: Value) {
        let vs = self.versions.entry(key).or_default();
        let pos = vs.partition_point(|v| v.t_c < t_c);
        assert!(
            vs.get(pos).is_none_or(|v| v.t_c != t_c),
            "two versions of key {key} at {t_c}"
        );
        vs.insert(
            pos,
            Version {
                t_c,
                key,
                value: Some(value),
            },
        );
    }

    /// All committed versions of `key` in timestamp order (initial version excluded).
    pub fn versions(&self, key: Key) -> &[Version] {
        self.versions.get(&key).map_or(&[], Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = Key> + '_ {
        self.versions.keys().copied()
    }
}
