//! Composite, totally ordered timestamps.
//!
//! Every protocol timestamp (prepare, commit, read, minimum-read and
//! snapshot) is a [`Timestamp`]: a physical component in microseconds plus a
//! logical counter and the id of the node that minted it. Comparison is
//! lexicographic over `(micros, logical, node)`, so "pick something strictly
//! greater" is always well defined even when two nodes observe the same
//! physical instant.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulated time in microseconds.
pub type Micros = u64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp {
    pub micros: Micros,
    pub logical: u32,
    pub node: u32,
}

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp {
        micros: 0,
        logical: 0,
        node: 0,
    };

    pub const MAX: Timestamp = Timestamp {
        micros: u64::MAX,
        logical: u32::MAX,
        node: u32::MAX,
    };

    /// A purely physical timestamp, as produced by the TrueTime interval.
    pub const fn from_micros(micros: Micros) -> Self {
        Timestamp {
            micros,
            logical: 0,
            node: 0,
        }
    }

    /// The smallest timestamp minted by `node` that is strictly greater than `self`.
    pub fn successor(self, node: u32) -> Self {
        if self.logical == u32::MAX {
            Timestamp {
                micros: self.micros + 1,
                logical: 0,
                node,
            }
        } else {
            Timestamp {
                micros: self.micros,
                logical: self.logical + 1,
                node,
            }
        }
    }

    /// Adds a physical duration, keeping the logical part.
    pub fn plus_micros(self, delta: Micros) -> Self {
        Timestamp {
            micros: self.micros.saturating_add(delta),
            ..self
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.logical == 0 && self.node == 0 {
            write!(f, "{}us", self.micros)
        } else {
            write!(f, "{}us.{}@{}", self.micros, self.logical, self.node)
        }
    }
}
