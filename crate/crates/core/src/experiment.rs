//! Experiment runner: configuration, session placement, invariant validation
//! and output files.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::checker::{check_with, CheckLimits, History, Model, Verdict};
use crate::client::shard_of;
use crate::cluster::{Cluster, ClusterConfig, ServiceSpec, SessionSource, DEFAULT_MAX_RETRIES};
use crate::error::{ConfigError, SimError};
use crate::kv::Key;
use crate::messages::{RO_LABELS, RW_LABELS};
use crate::shard::{Mode, Optimizations};
use crate::simnet::{derive_seed, LatencyMatrix, RegionId};
use crate::stats::LatencySummary;
use crate::timebase::TrueTimeConfig;
use crate::timestamp::{Micros, Timestamp};
use crate::workload::{Arrivals, ClientModel, WorkloadConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckPolicy {
    None,
    /// Also run the built-in litmus scenario in this run's mode and check it.
    Litmus,
    /// Check the whole history when it fits the checker's search cap.
    FullSmall,
}

impl std::str::FromStr for CheckPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CheckPolicy::None),
            "litmus" => Ok(CheckPolicy::Litmus),
            "full-small" => Ok(CheckPolicy::FullSmall),
            _ => Err(format!("unknown check policy {s:?}; expected none, litmus or full-small")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub matrix: LatencyMatrix,
    pub clock: TrueTimeConfig,
    pub fence_l_us: Option<Micros>,
    pub shards: usize,
    pub replicas_per_shard: usize,
    /// Leader regions, assigned to shards round-robin.
    pub leader_placement: Vec<RegionId>,
    pub opts: Optimizations,
    pub workload: WorkloadConfig,
    /// Sessions arrive, and issue transactions, only before this instant.
    pub duration_us: Micros,
    pub check: CheckPolicy,
    pub record_history: bool,
    /// Retries of an aborted read-write transaction before it is abandoned.
    pub max_retries: u32,
}

impl RunConfig {
    /// Three shards with three replicas each, one leader per region of the
    /// wide-area matrix, ε = 10 ms.
    pub fn wan_default(mode: Mode, seed: u64) -> Self {
        let matrix = LatencyMatrix::three_region_wan();
        RunConfig {
            mode,
            seed,
            leader_placement: (0..matrix.len()).map(RegionId).collect(),
            matrix,
            clock: TrueTimeConfig { epsilon_us: 10_000 },
            fence_l_us: None,
            shards: 3,
            replicas_per_shard: 3,
            opts: Optimizations::default(),
            workload: WorkloadConfig::default(),
            duration_us: 10_000_000,
            check: CheckPolicy::None,
            record_history: true,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload.validate()?;
        if self.shards == 0 || self.replicas_per_shard == 0 {
            return Err(ConfigError::Topology("need at least one shard and one replica".into()));
        }
        if self.replicas_per_shard > self.matrix.len() {
            return Err(ConfigError::Topology(format!(
                "{} replicas per shard but only {} regions",
                self.replicas_per_shard,
                self.matrix.len()
            )));
        }
        if self.leader_placement.is_empty() || self.leader_placement.iter().any(|r| r.0 >= self.matrix.len()) {
            return Err(ConfigError::Topology("leader placement names unknown regions".into()));
        }
        Ok(())
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        let mut c = ClusterConfig::new(self.matrix.clone(), self.mode, self.seed);
        c.clock = self.clock;
        c.opts = self.opts;
        c.fence_l_us = self.fence_l_us;
        c.record_history = self.record_history;
        c.max_retries = self.max_retries;
        c.services = vec![ServiceSpec::placed(
            "kv",
            self.shards,
            self.replicas_per_shard,
            &self.leader_placement,
            self.matrix.len(),
        )];
        c
    }
}

/// Outcome of the runtime invariant audit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub rw_checked: usize,
    pub ro_checked: usize,
    pub violations: Vec<String>,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits every completed transaction of a finished run:
///
/// - each committed read-write transaction has `invoke < t_c < respond`;
/// - read-write transactions writing a common key have distinct `t_c`;
/// - each read-only transaction has `t_snap <= t_read` and returned, per key,
///   the latest committed version at or below `t_snap` in the shard's store.
pub fn validate_invariants(cluster: &Cluster) -> InvariantReport {
    let sh = cluster.shared();
    let mut rep = InvariantReport::default();
    let mut by_key: HashMap<(&str, Key), BTreeMap<Timestamp, crate::kv::TxnId>> = HashMap::new();
    for r in &sh.rw {
        rep.rw_checked += 1;
        if !(Timestamp::from_micros(r.invoke_us) < r.t_c && r.t_c < Timestamp::from_micros(r.respond_us)) {
            rep.violations.push(format!(
                "{}: t_c {} outside [{}us, {}us]",
                r.txn, r.t_c, r.invoke_us, r.respond_us
            ));
        }
        for k in &r.writes {
            if let Some(other) = by_key.entry((r.service.as_str(), *k)).or_default().insert(r.t_c, r.txn) {
                rep.violations.push(format!("{} and {} both write key {k} at {}", other, r.txn, r.t_c));
            }
        }
    }
    let stores: BTreeMap<&str, Vec<&crate::shard::Store>> = cluster
        .services()
        .map(|s| (s, cluster.leaders(s).map(|l| l.store()).collect()))
        .collect();
    for r in &sh.ro {
        rep.ro_checked += 1;
        if r.t_snap > r.t_read {
            rep.violations.push(format!("RO {}: t_snap {} > t_read {}", r.txn, r.t_snap, r.t_read));
        }
        let shards = &stores[r.service.as_str()];
        for v in &r.values {
            let store = shards[shard_of(v.key, shards.len()).0 as usize];
            let want = store.read_at(v.key, r.t_snap);
            if want != *v {
                rep.violations.push(format!(
                    "RO {} read key {} as {:?}@{} but the store has {:?}@{} at t_snap {}",
                    r.txn,
                    v.key,
                    v.writer(),
                    v.t_c,
                    want.writer(),
                    want.t_c,
                    r.t_snap
                ));
            }
        }
    }
    rep
}

/// Message counts grouped into read-write and read-only protocol traffic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageTotals {
    pub rw: u64,
    pub ro: u64,
    pub ro_slow: u64,
}

pub fn message_totals(counts: &BTreeMap<String, u64>) -> MessageTotals {
    let sum = |labels: &[&str]| labels.iter().map(|l| counts.get(*l).copied().unwrap_or(0)).sum();
    MessageTotals {
        rw: sum(RW_LABELS),
        ro: sum(RO_LABELS),
        ro_slow: sum(&["ROSlowReply"]),
    }
}

pub struct RunOutput {
    pub summary: LatencySummary,
    pub history: History,
    pub invariants: InvariantReport,
    pub verdict: Option<Verdict>,
    pub cluster: Cluster,
    pub sim_end_us: Micros,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Places sessions for the configured client model. Regions contribute
/// equally via round-robin placement.
pub fn place_sessions(cluster: &mut Cluster, cfg: &RunConfig) -> Result<usize, ConfigError> {
    let regions = cfg.matrix.len();
    let mut n = 0usize;
    match cfg.workload.model {
        ClientModel::PartlyOpen { lambda, .. } => {
            let mut arrivals = Arrivals::new(lambda, derive_seed(cfg.seed, 1, 0))?;
            let mut t = 0;
            loop {
                t += arrivals.next_gap_us();
                if t >= cfg.duration_us {
                    break;
                }
                let seed = derive_seed(cfg.seed, 2, n as u64);
                cluster.add_session(
                    RegionId(n % regions),
                    t,
                    SessionSource::Workload {
                        service: "kv".into(),
                        seed,
                    },
                )?;
                n += 1;
            }
        }
        ClientModel::Closed { clients, .. } => {
            for i in 0..clients {
                let seed = derive_seed(cfg.seed, 2, i as u64);
                cluster.add_session(
                    RegionId(i % regions),
                    0,
                    SessionSource::Workload {
                        service: "kv".into(),
                        seed,
                    },
                )?;
                n += 1;
            }
        }
    }
    Ok(n)
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let mut cluster = Cluster::new(cfg.cluster_config())?;
    cluster.set_workload(cfg.workload.clone(), cfg.duration_us)?;
    place_sessions(&mut cluster, cfg)?;
    let horizon = cfg.duration_us.saturating_mul(20).max(600_000_000);
    let end = cluster.run(horizon, 10_000_000)?;
    let counts: BTreeMap<String, u64> = cluster
        .sim()
        .message_counts()
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    let sh = cluster.shared();
    let summary = LatencySummary::from_samples(&sh.samples, &sh.aborted_attempts, counts);
    let history = History::new(sh.history.clone());
    let invariants = validate_invariants(&cluster);
    let model = match cfg.mode {
        Mode::SpannerRss => Model::Rss,
        Mode::SpannerSs => Model::Ss,
    };
    let verdict = match cfg.check {
        CheckPolicy::None => None,
        CheckPolicy::FullSmall => Some(match check_with(&history, model, CheckLimits::default()) {
            Ok(v) => v,
            Err(e) => Verdict::Rejected {
                note: format!("corrupt history: {e}"),
            },
        }),
        CheckPolicy::Litmus => {
            let run = crate::scenarios::litmus(cfg.mode, cfg.seed)?;
            Some(check_with(&run.history, model, CheckLimits::default()).expect("well-formed litmus history"))
        }
    };
    Ok(RunOutput {
        summary,
        history,
        invariants,
        verdict,
        cluster,
        sim_end_us: end,
    })
}

/// Writes `history.log` and `summary.csv` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("history.log"), out.history.to_text())?;
    std::fs::write(dir.join("summary.csv"), out.summary.to_csv())?;
    Ok(())
}
