//! Coordinator choice and commit-latency estimates from the latency matrix.

use std::collections::HashMap;

use crate::kv::ShardId;
use crate::simnet::{LatencyMatrix, RegionId};
use crate::timestamp::Micros;

/// Where a shard's replicas live.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardPlacement {
    pub leader: RegionId,
    pub followers: Vec<RegionId>,
}

/// Precomputed best coordinator and its estimated commit latency, per
/// (client region, participant set).
#[derive(Clone, Debug)]
pub struct CommitPlanner {
    matrix: LatencyMatrix,
    shards: Vec<ShardPlacement>,
    table: HashMap<(RegionId, u64), (ShardId, Micros)>,
}

impl CommitPlanner {
    pub fn new(matrix: LatencyMatrix, shards: Vec<ShardPlacement>) -> Self {
        assert!(shards.len() <= 20, "planner enumerates participant subsets");
        let mut p = CommitPlanner {
            matrix,
            shards,
            table: HashMap::new(),
        };
        let n = p.shards.len();
        for r in 0..p.matrix.len() {
            for mask in 1u64..(1 << n) {
                let parts: Vec<ShardId> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ShardId(i as u32)).collect();
                let best = parts
                    .iter()
                    .map(|c| (*c, p.estimate(RegionId(r), &parts, *c)))
                    .min_by_key(|(c, est)| (*est, *c))
                    .expect("non-empty");
                p.table.insert((RegionId(r), mask), best);
            }
        }
        p
    }

    pub fn shards(&self) -> &[ShardPlacement] {
        &self.shards
    }

    /// Majority replication delay at a shard leader: the round trip to the
    /// nearest followers needed for a majority.
    pub fn replication_us(&self, shard: ShardId) -> Micros {
        let s = &self.shards[shard.0 as usize];
        if s.followers.is_empty() {
            return 0;
        }
        let mut rtts: Vec<Micros> = s.followers.iter().map(|f| self.matrix.rtt_us(s.leader, *f)).collect();
        rtts.sort_unstable();
        let majority = (s.followers.len() + 1) / 2 + 1;
        rtts[majority - 2]
    }

    /// Client to coordinator, prepares at the other participants in parallel,
    /// the coordinator's commit record, then the reply.
    pub fn estimate(&self, client: RegionId, parts: &[ShardId], coord: ShardId) -> Micros {
        let m = &self.matrix;
        let c = self.shards[coord.0 as usize].leader;
        let prepare = parts
            .iter()
            .filter(|p| **p != coord)
            .map(|p| {
                let r = self.shards[p.0 as usize].leader;
                m.one_way_us(c, r) + self.replication_us(*p) + m.one_way_us(r, c)
            })
            .max()
            .unwrap_or(0);
        m.one_way_us(client, c) + prepare + self.replication_us(coord) + m.one_way_us(c, client)
    }

    pub fn choose(&self, client: RegionId, parts: &[ShardId]) -> (ShardId, Micros) {
        let mask = parts.iter().fold(0u64, |m, s| m | (1 << s.0));
        self.table[&(client, mask)]
    }

    /// Largest best-choice estimate over all client regions and participant sets.
    pub fn max_estimate(&self) -> Micros {
        self.table.values().map(|(_, e)| *e).max().unwrap_or(0)
    }

    /// Default fence bound: three times the largest estimate.
    pub fn default_fence_l(&self) -> Micros {
        3 * self.max_estimate()
    }
}
