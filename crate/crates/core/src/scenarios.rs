//! Scripted executions on the wide-area topology.
//!
//! Regions are CA, VA and IR (round trips 62, 136 and 68 ms); shard `i` of
//! a service is led from region `i`. Scripts start at one second so that
//! TrueTime intervals stay clear of zero.

use crate::checker::{CheckLimits, History};
use crate::client::ServiceRoute;
use crate::cluster::{Cluster, ClusterConfig, ServiceSpec, SessionSource, Step};
use crate::error::ConfigError;
use crate::experiment::RunError;
use crate::kv::{Key, ShardId, TxnId};
use crate::shard::Mode;
use crate::simnet::{derive_seed, LatencyMatrix, RegionId};
use crate::timebase::TrueTimeConfig;
use crate::timestamp::Micros;
use crate::workload::{ClientModel, KeySampler, NextAction, SessionGen, WorkloadConfig};

pub const CA: RegionId = RegionId(0);
pub const VA: RegionId = RegionId(1);
pub const IR: RegionId = RegionId(2);

const T0: Micros = 1_000_000;
const MS: Micros = 1_000;

pub struct ScenarioRun {
    pub history: History,
    pub cluster: Cluster,
}

/// The `n`-th key (in key order) that hashes to `shard`.
pub fn key_on(route: &ServiceRoute, shard: usize, n: usize) -> Key {
    (0..)
        .filter(|k| route.shard_of(*k) == ShardId(shard as u32))
        .nth(n)
        .expect("keys are unbounded")
}

fn wan_config(mode: Mode, seed: u64, jitter: bool) -> ClusterConfig {
    let mut m = LatencyMatrix::three_region_wan();
    if !jitter {
        m = m.with_jitter(0.0);
    }
    let mut c = ClusterConfig::new(m, mode, seed);
    c.clock = TrueTimeConfig { epsilon_us: 10 * MS };
    c
}

fn poll(service: &str, key: Key, every_us: Micros) -> Step {
    Step::PollRo {
        service: service.into(),
        key,
        every_us,
        tries: 400,
    }
}

fn finish(mut cluster: Cluster) -> Result<ScenarioRun, RunError> {
    cluster.run(600_000_000, 10_000_000)?;
    Ok(ScenarioRun {
        history: History::new(cluster.shared().history.clone()),
        cluster,
    })
}

/// A writer in VA commits keys at the CA and IR shards (CA coordinates).
/// The coordinator applies before the writer's reply arrives; a reader in CA
/// sees the write there, then a reader at the IR shard, invoked after the
/// first responded, reads the other key while IR still holds the prepare.
///
/// Under RSS the second read skips the prepared write and returns the old
/// value at once; under strict serializability it blocks for the decision.
pub fn litmus(mode: Mode, seed: u64) -> Result<ScenarioRun, RunError> {
    let mut c = Cluster::new(wan_config(mode, seed, false))?;
    let route = c.route("kv").clone();
    let (x, y) = (key_on(&route, 0, 0), key_on(&route, 2, 0));
    c.add_session(VA, T0, SessionSource::Script(vec![Step::rw("kv", &[], &[x, y])]))?;
    c.add_session(CA, T0 + 300 * MS, SessionSource::Script(vec![Step::ro("kv", &[x])]))?;
    c.add_session(IR, T0 + 302 * MS, SessionSource::Script(vec![Step::ro("kv", &[y])]))?;
    finish(c)
}

/// Outcome of [`fence_scenario`].
pub struct FenceRun {
    pub run: ScenarioRun,
    pub writer: TxnId,
    /// Per read-only transaction of the signalled reader: did it see the write?
    pub reads_saw_write: Vec<bool>,
}

/// Which process fences and signals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FenceVariant {
    /// The writer commits, fences and signals the reader.
    Writer,
    /// An observer reads the in-flight write at the coordinator, fences and
    /// signals the reader.
    Observer,
}

/// The signal carries no causal context, so only the fence orders the
/// reader after the write.
pub fn fence_scenario(mode: Mode, seed: u64, variant: FenceVariant, fence: bool) -> Result<FenceRun, RunError> {
    let mut c = Cluster::new(wan_config(mode, seed, true))?;
    let route = c.route("kv").clone();
    let keys: Vec<Key> = (0..3).map(|s| key_on(&route, s, 0)).collect();
    let (x, y) = (keys[0], keys[2]);
    let signal = |to| Step::Signal {
        to,
        id: 1,
        with_context: false,
    };
    let read_all = vec![
        Step::AwaitSignal { id: 1 },
        Step::ro("kv", &[y]),
        Step::ro("kv", &keys),
        Step::ro("kv", &[x]),
    ];
    match variant {
        FenceVariant::Writer => {
            let mut w = vec![Step::rw("kv", &[], &[x, y])];
            if fence {
                w.push(Step::fence("kv"));
            }
            w.push(signal(1));
            c.add_session(VA, T0, SessionSource::Script(w))?;
            c.add_session(CA, T0, SessionSource::Script(read_all))?;
        }
        FenceVariant::Observer => {
            c.add_session(VA, T0, SessionSource::Script(vec![Step::rw("kv", &[], &[x, y])]))?;
            let mut o = vec![Step::SleepUntil(T0 + 250 * MS), poll("kv", x, MS)];
            if fence {
                o.push(Step::fence("kv"));
            }
            o.push(signal(2));
            c.add_session(CA, 0, SessionSource::Script(o))?;
            c.add_session(CA, T0, SessionSource::Script(read_all))?;
        }
    }
    let run = finish(c)?;
    let sh = run.cluster.shared();
    let writer = sh.rw[0].txn;
    let reader = match variant {
        FenceVariant::Writer => 1,
        FenceVariant::Observer => 2,
    };
    let reads_saw_write = sh
        .ro
        .iter()
        .filter(|r| r.session == reader)
        .map(|r| r.values.iter().any(|v| v.writer() == Some(writer)))
        .collect();
    Ok(FenceRun {
        run,
        writer,
        reads_saw_write,
    })
}

/// Two services X and Y, each with a shard led from every region. Writers
/// in VA update one key at each service's CA and IR shards. Two CA clients
/// each read the CA key of one service and then the IR key of the other.
///
/// Without libRSS each service keeps its own `t_min`, so the second read may
/// skip the other writer's prepare; the two clients then observe the writes
/// in opposite orders.
/// Checker limits for [`composition`] histories, which carry the polling reads.
pub fn composition_limits() -> CheckLimits {
    CheckLimits {
        max_units: 40,
        ..CheckLimits::default()
    }
}

pub fn composition(seed: u64, librss: bool) -> Result<ScenarioRun, RunError> {
    let mut cfg = wan_config(Mode::SpannerRss, seed, true);
    cfg.librss = librss;
    cfg.services = vec![
        ServiceSpec::one_leader_per_region("X", 3, 3),
        ServiceSpec::one_leader_per_region("Y", 3, 3),
    ];
    let mut c = Cluster::new(cfg)?;
    let (rx, ry) = (c.route("X").clone(), c.route("Y").clone());
    let (xa, xb) = (key_on(&rx, 0, 0), key_on(&rx, 2, 0));
    let (ya, yb) = (key_on(&ry, 0, 0), key_on(&ry, 2, 0));
    c.add_session(VA, T0, SessionSource::Script(vec![Step::rw("X", &[], &[xa, xb])]))?;
    c.add_session(VA, T0, SessionSource::Script(vec![Step::rw("Y", &[], &[ya, yb])]))?;
    let at = T0 + 295 * MS;
    c.add_session(CA, at, SessionSource::Script(vec![poll("X", xa, 2 * MS), Step::ro("Y", &[yb])]))?;
    c.add_session(CA, at, SessionSource::Script(vec![poll("Y", ya, 2 * MS), Step::ro("X", &[xb])]))?;
    finish(c)
}

/// Desk-scale run: 2 shards led from CA and VA, 3 sessions (one per region)
/// of 4 Retwis transactions each over 8 keys at skew 0.9, ε = 10 ms.
pub fn tiny(mode: Mode, seed: u64) -> Result<ScenarioRun, RunError> {
    let mut cfg = wan_config(mode, seed, true);
    cfg.services = vec![ServiceSpec::placed("kv", 2, 3, &[CA, VA], 3)];
    let mut c = Cluster::new(cfg)?;
    let w = WorkloadConfig {
        num_keys: 8,
        skew: 0.9,
        model: ClientModel::Closed { clients: 3, think_us: 0 },
        key_counts: crate::workload::KeyCounts {
            load_timeline: 3,
            ..Default::default()
        },
        ..WorkloadConfig::default()
    };
    let keys = KeySampler::new(w.num_keys, w.skew).map_err(ConfigError::from)?;
    for s in 0..3 {
        let mut g = SessionGen::new(&w, derive_seed(seed, 3, s));
        let mut steps = Vec::new();
        while steps.len() < 4 {
            if let NextAction::Txn(t) = g.next_action(&keys) {
                steps.push(if t.kind.is_read_only() {
                    Step::ro("kv", &t.reads)
                } else {
                    Step::rw("kv", &t.reads, &t.writes)
                });
            }
        }
        let start = T0 + (derive_seed(seed, 4, s) % 200) * MS;
        c.add_session(RegionId(s as usize), start, SessionSource::Script(steps))?;
    }
    finish(c)
}
