//! Keys, provenance-carrying values and committed versions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::timestamp::Timestamp;

pub type Key = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShardId(pub u32);

/// A written value. The writer id makes reads-from unambiguous.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Value {
    pub writer: TxnId,
    pub key: Key,
    pub counter: u32,
}

/// One committed `(t_c, key, value)` triple. `value == None` is the initial
/// version every key has at `t_c = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Version {
    pub t_c: Timestamp,
    pub key: Key,
    pub value: Option<Value>,
}

impl Version {
    pub fn initial(key: Key) -> Self {
        Version {
            t_c: Timestamp::ZERO,
            key,
            value: None,
        }
    }

    pub fn writer(&self) -> Option<TxnId> {
        self.value.map(|v| v.writer)
    }
}
