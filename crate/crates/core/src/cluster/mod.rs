//! A simulated deployment: one or more services, each a set of replicated
//! shards, plus client sessions.

mod session;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use session::{FenceRecord, RoRecord, RwRecord, Sample, SessionSource, Shared, Step};

use crate::client::{ClientLib, CommitPlanner, FenceConfig, ServiceRoute, ShardPlacement};
use crate::error::{ConfigError, SimError};
use crate::kv::ShardId;
use crate::messages::{Msg, Timer};
use crate::replication::{Follower, ReplicatedLog};
use crate::shard::{Mode, Optimizations, ShardConfig, ShardLeader};
use crate::simnet::{Event, EventKind, LatencyMatrix, NodeId, Outbox, RegionId, Sim, World};
use crate::timebase::TrueTimeConfig;
use crate::timestamp::Micros;
use crate::workload::{KeySampler, WorkloadConfig};
use session::Session;

/// Lock-wait timeout at the shards.
pub const DEFAULT_LOCK_TIMEOUT_US: Micros = 1_000_000;

pub const DEFAULT_MAX_RETRIES: u32 = 20;

/// One independent transactional service.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceSpec {
    pub name: String,
    pub shards: Vec<ShardPlacement>,
}

impl ServiceSpec {
    /// One shard led from each region, replicated to every other region.
    pub fn one_leader_per_region(name: &str, regions: usize, replicas: usize) -> Self {
        let shards = (0..regions)
            .map(|r| ShardPlacement {
                leader: RegionId(r),
                followers: (1..replicas).map(|i| RegionId((r + i) % regions)).collect(),
            })
            .collect();
        ServiceSpec {
            name: name.into(),
            shards,
        }
    }

    /// `shards` shards with leaders placed round-robin over `leaders`.
    pub fn placed(name: &str, shards: usize, replicas: usize, leaders: &[RegionId], regions: usize) -> Self {
        let shards = (0..shards)
            .map(|i| {
                let leader = leaders[i % leaders.len()];
                ShardPlacement {
                    leader,
                    followers: (1..replicas).map(|j| RegionId((leader.0 + j) % regions)).collect(),
                }
            })
            .collect();
        ServiceSpec {
            name: name.into(),
            shards,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClusterConfig {
    pub matrix: LatencyMatrix,
    pub seed: u64,
    pub mode: Mode,
    pub clock: TrueTimeConfig,
    pub opts: Optimizations,
    pub lock_timeout_us: Micros,
    /// Leaders hold leases and advance safe time with local no-ops.
    pub lease: bool,
    pub services: Vec<ServiceSpec>,
    /// Fence bound; defaults to three times the largest commit estimate.
    pub fence_l_us: Option<Micros>,
    pub librss: bool,
    pub record_history: bool,
    /// Retries of an aborted read-write transaction before it is abandoned.
    pub max_retries: u32,
}

impl ClusterConfig {
    pub fn new(matrix: LatencyMatrix, mode: Mode, seed: u64) -> Self {
        let regions = matrix.len();
        ClusterConfig {
            matrix,
            seed,
            mode,
            clock: TrueTimeConfig::default(),
            opts: Optimizations::default(),
            lock_timeout_us: DEFAULT_LOCK_TIMEOUT_US,
            lease: true,
            services: vec![ServiceSpec::one_leader_per_region("kv", regions, regions.min(3))],
            fence_l_us: None,
            librss: true,
            record_history: true,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

enum Node {
    Leader(Box<ShardLeader>),
    Follower(Follower),
    Session(Box<Session>),
}

pub struct ClusterWorld {
    nodes: Vec<Node>,
    shared: Shared,
    sessions: Vec<NodeId>,
    /// Leader nodes per service, in shard order.
    leaders: BTreeMap<String, Vec<NodeId>>,
    finished: usize,
    workload: Option<WorkloadConfig>,
}

impl World<Msg> for ClusterWorld {
    fn handle(&mut self, out: &mut Outbox<Msg>, event: Event<Msg>) {
        let (target, from, msg) = match event.kind {
            EventKind::Deliver { from, to, msg } => (to, from, msg),
            EventKind::Timer { node, msg, .. } => (node, node, msg),
        };
        match &mut self.nodes[target.0 as usize] {
            Node::Leader(l) => l.handle(out, from, msg),
            Node::Follower(f) => match msg {
                Msg::Append(a) => {
                    let ack = f.on_append(a);
                    out.send(from, Msg::AppendAck(ack));
                }
                other => panic!("follower {} got {other:?}", target.0),
            },
            Node::Session(s) => {
                let was = s.finished();
                s.handle(out, &mut self.shared, msg);
                if !was && s.finished() {
                    self.finished += 1;
                }
            }
        }
    }

    fn done(&self) -> bool {
        self.finished == self.sessions.len()
    }

    fn blocked_waiters(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match n {
                Node::Leader(l) => out.extend(l.waiters()),
                Node::Session(s) => out.extend(s.describe()),
                Node::Follower(_) => {}
            }
        }
        out
    }
}

pub struct Cluster {
    pub cfg: ClusterConfig,
    sim: Sim<Msg>,
    world: ClusterWorld,
    routes: BTreeMap<String, Arc<ServiceRoute>>,
}

impl Cluster {
    pub fn new(cfg: ClusterConfig) -> Result<Self, ConfigError> {
        if cfg.services.is_empty() {
            return Err(ConfigError::Topology("no services".into()));
        }
        let mut sim = Sim::new(cfg.matrix.clone(), cfg.seed);
        let mut nodes = Vec::new();
        let mut leaders = BTreeMap::new();
        let mut planners = Vec::new();
        for svc in &cfg.services {
            if svc.shards.is_empty() {
                return Err(ConfigError::Topology(format!("service {} has no shards", svc.name)));
            }
            if leaders.contains_key(&svc.name) {
                return Err(ConfigError::Topology(format!("duplicate service {}", svc.name)));
            }
            let mut svc_leaders = Vec::new();
            for (i, p) in svc.shards.iter().enumerate() {
                let leader = sim.add_node(p.leader)?;
                nodes.push(None);
                let mut followers = Vec::new();
                for f in &p.followers {
                    followers.push(sim.add_node(*f)?);
                    nodes.push(Some(Node::Follower(Follower::default())));
                }
                let shard = ShardId(i as u32);
                let log = ReplicatedLog::new(shard, followers, cfg.lease);
                let leader_cfg = ShardConfig {
                    id: shard,
                    node: leader,
                    mode: cfg.mode,
                    clock: cfg.clock,
                    opts: cfg.opts,
                    lock_timeout_us: cfg.lock_timeout_us,
                };
                nodes[leader.0 as usize] = Some(Node::Leader(Box::new(ShardLeader::new(leader_cfg, log))));
                svc_leaders.push(leader);
            }
            planners.push(CommitPlanner::new(cfg.matrix.clone(), svc.shards.clone()));
            leaders.insert(svc.name.clone(), svc_leaders);
        }
        let fence_l = cfg
            .fence_l_us
            .unwrap_or_else(|| planners.iter().map(|p| p.default_fence_l()).max().unwrap_or(0));
        let mut routes = BTreeMap::new();
        for (svc, planner) in cfg.services.iter().zip(planners) {
            routes.insert(
                svc.name.clone(),
                Arc::new(ServiceRoute {
                    name: svc.name.clone(),
                    shard_nodes: leaders[&svc.name].clone(),
                    planner: Arc::new(planner),
                    clock: cfg.clock,
                    fence: FenceConfig { l_us: fence_l },
                }),
            );
        }
        let mut shared = Shared::new(cfg.record_history);
        shared.max_retries = cfg.max_retries;
        let world = ClusterWorld {
            nodes: nodes.into_iter().map(|n| n.expect("every node is built")).collect(),
            shared,
            sessions: Vec::new(),
            leaders,
            finished: 0,
            workload: None,
        };
        Ok(Cluster {
            cfg,
            sim,
            world,
            routes,
        })
    }

    /// Enables workload sessions: key sampling and the issue cutoff.
    pub fn set_workload(&mut self, w: WorkloadConfig, stop_issuing_at: Micros) -> Result<(), ConfigError> {
        w.validate()?;
        self.world.shared.keys = Some(KeySampler::new(w.num_keys, w.skew)?);
        self.world.shared.stop_issuing_at = stop_issuing_at;
        self.world.workload = Some(w);
        Ok(())
    }

    pub fn route(&self, service: &str) -> &Arc<ServiceRoute> {
        &self.routes[service]
    }

    pub fn fence_l_us(&self) -> Micros {
        self.routes.values().next().map(|r| r.fence.l_us).unwrap_or(0)
    }

    /// Adds a session in `region` that starts at `start_us`. Returns its index.
    pub fn add_session(&mut self, region: RegionId, start_us: Micros, source: SessionSource) -> Result<usize, ConfigError> {
        if let SessionSource::Workload { service, .. } = &source {
            if self.world.workload.is_none() {
                return Err(ConfigError::Workload("set_workload must precede workload sessions".into()));
            }
            if !self.routes.contains_key(service) {
                return Err(ConfigError::Topology(format!("unknown service {service}")));
            }
        }
        let node = self.sim.add_node(region)?;
        let index = self.world.sessions.len();
        let libs = self
            .routes
            .iter()
            .map(|(n, r)| (n.clone(), ClientLib::new(r.clone(), region)))
            .collect();
        let s = Session::new(
            index,
            node,
            region,
            source,
            libs,
            self.cfg.librss,
            self.world.workload.as_ref(),
        );
        debug_assert_eq!(node.0 as usize, self.world.nodes.len());
        self.world.nodes.push(Node::Session(Box::new(s)));
        self.world.sessions.push(node);
        self.world.shared.session_nodes.push(node);
        let delay = start_us.saturating_sub(self.sim.now());
        self.sim.set_timer(node, delay, Msg::Timer(Timer::SessionArrival));
        Ok(index)
    }

    /// Runs until every session has finished, then lets in-flight protocol
    /// messages drain for `drain_us`.
    pub fn run(&mut self, horizon: Micros, drain_us: Micros) -> Result<Micros, SimError> {
        let end = self.sim.run_to_completion(&mut self.world, horizon)?;
        self.sim.run_until(&mut self.world, end + drain_us)?;
        Ok(end)
    }

    pub fn now(&self) -> Micros {
        self.sim.now()
    }

    pub fn sim(&self) -> &Sim<Msg> {
        &self.sim
    }

    pub fn shared(&self) -> &Shared {
        &self.world.shared
    }

    pub fn session_count(&self) -> usize {
        self.world.sessions.len()
    }

    pub fn leaders(&self, service: &str) -> impl Iterator<Item = &ShardLeader> {
        self.world.leaders[service].iter().map(|n| match &self.world.nodes[n.0 as usize] {
            Node::Leader(l) => l.as_ref(),
            _ => unreachable!("leader node"),
        })
    }

    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(|s| s.as_str())
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.world.sessions.iter().map(|n| match &self.world.nodes[n.0 as usize] {
            Node::Session(s) => s.as_ref(),
            _ => unreachable!("session node"),
        })
    }
}

pub use session::Session as ClientSession;
